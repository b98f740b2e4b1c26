//! Reads a tiled GeoTIFF assembled byte by byte, independent of the writer.

use std::io::Cursor;

use pavecond::geo::geotiff::{decode_geotiff, read_geotiff};

const WIDTH: usize = 20;
const HEIGHT: usize = 18;
const TILE: usize = 16;

fn value(col: usize, row: usize, band: usize) -> u8 {
    ((col * 7 + row * 13 + band * 50) % 256) as u8
}

enum Field {
    Short(Vec<u16>),
    Long(Vec<u32>),
    Double(Vec<f64>),
}

impl Field {
    fn type_and_count(&self) -> (u16, u32) {
        match self {
            Field::Short(v) => (3, v.len() as u32),
            Field::Long(v) => (4, v.len() as u32),
            Field::Double(v) => (12, v.len() as u32),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            Field::Short(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Field::Long(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Field::Double(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// Little-endian TIFF: tiles first, then the IFD, then out-of-line values.
fn tiled_geotiff() -> Vec<u8> {
    let (tiles_x, tiles_y) = (WIDTH.div_ceil(TILE), HEIGHT.div_ceil(TILE));
    let mut tiles = Vec::new();
    let mut offsets = Vec::new();
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            offsets.push(8 + tiles.len() as u32);
            for r in 0..TILE {
                for c in 0..TILE {
                    let (col, row) = (tx * TILE + c, ty * TILE + r);
                    for b in 0..3 {
                        // Padding outside the image must be ignored by the reader.
                        tiles.push(if col < WIDTH && row < HEIGHT { value(col, row, b) } else { 0xEE });
                    }
                }
            }
        }
    }
    let tile_bytes = (TILE * TILE * 3) as u32;
    let fields: Vec<(u16, Field)> = vec![
        (256, Field::Short(vec![WIDTH as u16])),
        (257, Field::Short(vec![HEIGHT as u16])),
        (258, Field::Short(vec![8, 8, 8])),
        (259, Field::Short(vec![1])),
        (262, Field::Short(vec![2])),
        (277, Field::Short(vec![3])),
        (284, Field::Short(vec![1])),
        (322, Field::Short(vec![TILE as u16])),
        (323, Field::Short(vec![TILE as u16])),
        (324, Field::Long(offsets.clone())),
        (325, Field::Long(vec![tile_bytes; offsets.len()])),
        (33550, Field::Double(vec![0.5, 0.5, 0.0])),
        (33922, Field::Double(vec![0.0, 0.0, 0.0, 500_000.0, 3_000_000.0, 0.0])),
        (
            34735,
            Field::Short(vec![1, 1, 0, 3, 1024, 0, 1, 1, 1025, 0, 1, 1, 3072, 0, 1, 32614]),
        ),
    ];
    let ifd_at = 8 + tiles.len();
    let mut extra_at = ifd_at + 2 + 12 * fields.len() + 4;
    let mut ifd = (fields.len() as u16).to_le_bytes().to_vec();
    let mut extra = Vec::new();
    for (tag, field) in &fields {
        let (ty, count) = field.type_and_count();
        let bytes = field.bytes();
        ifd.extend(tag.to_le_bytes());
        ifd.extend(ty.to_le_bytes());
        ifd.extend(count.to_le_bytes());
        if bytes.len() <= 4 {
            let mut inline = bytes.clone();
            inline.resize(4, 0);
            ifd.extend(inline);
        } else {
            ifd.extend((extra_at as u32).to_le_bytes());
            extra_at += bytes.len();
            extra.extend(bytes);
        }
    }
    ifd.extend(0u32.to_le_bytes());

    let mut out = b"II".to_vec();
    out.extend(42u16.to_le_bytes());
    out.extend((ifd_at as u32).to_le_bytes());
    out.extend(tiles);
    out.extend(ifd);
    out.extend(extra);
    out
}

#[test]
fn tiled_rgb_pixels_transform_and_crs() {
    let r = decode_geotiff(Cursor::new(tiled_geotiff()), "hand").unwrap();
    assert_eq!((r.width, r.height, r.bands), (WIDTH, HEIGHT, 3));
    assert_eq!(r.crs_id, "EPSG:32614");
    for row in 0..HEIGHT {
        for col in 0..WIDTH {
            let want: Vec<u8> = (0..3).map(|b| value(col, row, b)).collect();
            assert_eq!(r.pixel(col, row), &want[..], "pixel ({col},{row})");
        }
    }
    let c = r.transform.pixel_center(0, 0);
    assert_eq!((c.x, c.y), (500_000.25, 2_999_999.75));
    let c = r.transform.pixel_center(19, 17);
    assert_eq!((c.x, c.y), (500_009.75, 2_999_991.25));
    assert_eq!(r.transform.to_gdal(), [500_000.0, 0.5, 0.0, 3_000_000.0, 0.0, -0.5]);
}

#[test]
fn file_reader_uses_stem_as_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ortho_07.tif");
    std::fs::write(&path, tiled_geotiff()).unwrap();
    let r = read_geotiff(&path).unwrap();
    assert_eq!(r.id, "ortho_07");
    assert_eq!(r.pixel(17, 3), &[value(17, 3, 0), value(17, 3, 1), value(17, 3, 2)][..]);
}

#[test]
fn truncated_file_is_an_error() {
    let mut bytes = tiled_geotiff();
    bytes.truncate(100);
    assert!(decode_geotiff(Cursor::new(bytes), "cut").is_err());
}
