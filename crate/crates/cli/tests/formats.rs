use photocon::formats::{read_pfm, read_pnm, write_pfm, write_pgm, write_ppm, FormatError};
use photocon_core::grid::Grid;

#[test]
fn pfm_round_trip_is_exact_for_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    let map = Grid::from_fn(5, 7, |i, j| (1.5 + i as f64 * 0.25 + j as f64 * 3.0) as f32 as f64);
    write_pfm(&path, &map).unwrap();
    assert_eq!(read_pfm(&path).unwrap(), map);
}

#[test]
fn pfm_is_little_endian_bottom_up() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    let map = Grid::from_fn(2, 3, |i, j| (10 * i + j) as f64);
    write_pfm(&path, &map).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = b"Pf\n3 2\n-1.0\n";
    assert_eq!(&bytes[..header.len()], header);
    let first = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
    assert_eq!(first, 10.0);
}

#[test]
fn pfm_reads_big_endian() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("be.pfm");
    let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
    bytes.extend_from_slice(&2.5f32.to_be_bytes());
    bytes.extend_from_slice(&(-4.0f32).to_be_bytes());
    std::fs::write(&path, bytes).unwrap();
    let m = read_pfm(&path).unwrap();
    assert_eq!(m.data(), &[2.5, -4.0]);
}

#[test]
fn pfm_rejects_colour_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.pfm");
    std::fs::write(&path, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    assert!(matches!(read_pfm(&path), Err(FormatError::Unsupported { .. })));
    std::fs::write(&path, b"Pf\n4 4\n-1.0\n\0\0\0\0").unwrap();
    assert!(matches!(read_pfm(&path), Err(FormatError::Truncated { .. })));
}

#[test]
fn pgm_round_trip_quantizes_to_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.pgm");
    let img = Grid::from_fn(3, 4, |i, j| (i * 4 + j) as f64 / 11.0);
    write_pgm(&path, &img).unwrap();
    let back = read_pnm(&path).unwrap();
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn pnm_header_comments_and_ppm_gray() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.pgm");
    std::fs::write(&path, b"P5\n# made by hand\n2 1\n# max\n255\n\x00\xff").unwrap();
    assert_eq!(read_pnm(&path).unwrap().data(), &[0.0, 1.0]);

    let path = dir.path().join("c.ppm");
    let r = Grid::new(1, 1, 1.0);
    let z = Grid::new(1, 1, 0.0);
    write_ppm(&path, [&r, &z, &r]).unwrap();
    let g = read_pnm(&path).unwrap();
    assert!((g.at(0, 0) - 2.0 / 3.0).abs() < 1e-12);
}
