use specrank::matrix_io::{load_matrix, write_csv, DataMatrix, Format, Orientation};
use specrank::Error;

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let m = DataMatrix::from_rows(&[vec![1.0, -2.5e-17, 3.0], vec![0.1, 1e300, -7.25]]).unwrap();
    write_csv(&m, &path).unwrap();
    let back = load_matrix(&path, Format::Csv, Orientation::SamplesAsRows).unwrap();
    assert_eq!(back.values(), m.values());
}

#[test]
fn columns_orientation_transposes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tsv");
    std::fs::write(&path, "1\t2\t3\n4\t5\t6\n").unwrap();
    let m = load_matrix(&path, Format::Tsv, Orientation::SamplesAsColumns).unwrap();
    assert_eq!((m.n(), m.p()), (3, 2));
    assert_eq!(m.values()[(2, 1)], 6.0);
}

#[test]
fn missing_file_is_reported() {
    let err = load_matrix("/no/such/file.csv".as_ref(), Format::Csv, Orientation::SamplesAsRows).unwrap_err();
    assert!(matches!(err, Error::FileNotFound(_)), "{err:?}");
}
