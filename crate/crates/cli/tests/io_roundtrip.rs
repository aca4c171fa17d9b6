use std::io::Write;

use crpd_cli::{parse_csv, parse_csv_str, write_csv, IoError};
use crpd_core::Dataset;
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..30).prop_flat_map(|(cols, rows)| {
        let names = proptest::collection::hash_set("[a-z][a-z0-9_]{0,7}", cols);
        let values = proptest::collection::vec(
            proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL,
            cols * rows,
        );
        (names, values).prop_map(move |(names, values)| {
            let names: Vec<String> = names.into_iter().collect();
            let rows: Vec<Vec<f64>> = values.chunks(names.len()).map(<[f64]>::to_vec).collect();
            Dataset::from_rows(names, rows).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn write_then_parse_is_exact(d in dataset_strategy()) {
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = parse_csv_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.column_names(), d.column_names());
        for (a, b) in back.rows().zip(d.rows()) {
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

#[test]
fn reads_from_disk() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(f, "x\n1\n2\n3\n").unwrap();
    let d = parse_csv(f.path()).unwrap();
    assert_eq!(d.column("x").unwrap(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn missing_file_and_bad_encoding() {
    assert!(matches!(
        parse_csv(std::path::Path::new("/nonexistent/data.csv")),
        Err(IoError::Read { .. })
    ));
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(b"x\n\xff\xfe\n").unwrap();
    assert!(matches!(parse_csv(f.path()), Err(IoError::Read { .. })));
}

#[test]
fn blank_line_is_located() {
    let e = parse_csv_str("a,b\n1,2\n3,4\n\n5,6\n").unwrap_err();
    assert_eq!(e, IoError::BlankLine { line: 4 });
    assert!(e.to_string().contains("line 4"));
}

#[test]
fn whitespace_around_cells_is_ignored() {
    let d = parse_csv_str(" a , b \n 1 , 2\n3,4\r\n").unwrap();
    assert_eq!(d.column_names(), ["a", "b"]);
    assert_eq!(d.column("b").unwrap(), vec![2.0, 4.0]);
}
