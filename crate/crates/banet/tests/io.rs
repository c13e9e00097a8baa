use banet::error::BanetError;
use banet::io::{load_image, load_mask, save_grid, save_image, save_mask};
use banet_core::raster::{Grid, Image, MaskMap, MaskRole};
use image::{Rgb, RgbImage, Rgba, RgbaImage};

#[test]
fn mask_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::from_fn(9, 11, |y, x| ((y * x) % 3 == 0) as u8 as f64);
    let mask = MaskMap::new(grid.clone(), MaskRole::SegTarget).unwrap();
    let path = dir.path().join("nested/m.png");
    save_mask(&path, &mask).unwrap();
    let back = load_mask(&path, MaskRole::SegTarget).unwrap();
    assert_eq!(back.grid(), &grid);
}

#[test]
fn image_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(8, 10, |y, x| {
        let v = |c: usize| ((y + 2 * x + 3 * c) % 17) as f64 / 16.0;
        [v(0), v(1), v(2)]
    })
    .unwrap();
    let path = dir.path().join("i.png");
    save_image(&path, &img).unwrap();
    let back = load_image(&path).unwrap();
    assert_eq!(back.dims(), (8, 10));
    for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn alpha_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    RgbaImage::from_pixel(8, 8, Rgba([255, 0, 51, 7])).save(&path).unwrap();
    let img = load_image(&path).unwrap();
    assert_eq!(img.pixel(3, 3), [1.0, 0.0, 0.2]);
}

#[test]
fn color_mask_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    RgbImage::from_pixel(8, 8, Rgb([255, 255, 255])).save(&path).unwrap();
    let err = load_mask(&path, MaskRole::SegTarget).unwrap_err();
    assert!(matches!(err, BanetError::Decode { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_and_garbage_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = load_image(dir.path().join("none.png")).unwrap_err();
    assert!(matches!(missing, BanetError::Io { .. }));
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert!(load_image(&junk).is_err());
}

#[test]
fn confidence_grid_saves_as_gray_levels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.png");
    save_grid(&path, &Grid::from_fn(8, 8, |_, x| x as f64 / 7.0)).unwrap();
    let gray = image::open(&path).unwrap().to_luma8();
    assert_eq!(gray.get_pixel(0, 0).0[0], 0);
    assert_eq!(gray.get_pixel(7, 0).0[0], 255);
}
