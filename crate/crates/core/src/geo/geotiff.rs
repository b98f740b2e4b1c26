//! Minimal GeoTIFF reader/writer.
//!
//! Supported: 8-bit, 1 or 3 bands, pixel-interleaved, uncompressed or
//! deflate, stripped or tiled. Georeferencing comes from
//! ModelTransformationTag, or from ModelPixelScaleTag + ModelTiepointTag.
//! The CRS id is read from the GeoKey directory as `EPSG:<code>`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, Compression, DeflateLevel, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use super::{AffineGeoTransform, GeoRaster};
use crate::{Error, Result};

const GT_MODEL_TYPE_GEO_KEY: u16 = 1024;
const GT_RASTER_TYPE_GEO_KEY: u16 = 1025;
const GEOGRAPHIC_TYPE_GEO_KEY: u16 = 2048;
const PROJECTED_CS_TYPE_GEO_KEY: u16 = 3072;
const MODEL_TYPE_PROJECTED: u16 = 1;
const RASTER_PIXEL_IS_AREA: u16 = 1;

/// CRS id used when a file carries no EPSG code.
pub const UNKNOWN_CRS: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiffCompression {
    #[default]
    None,
    Deflate,
}

pub fn read_geotiff(path: &Path) -> Result<GeoRaster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_geotiff(BufReader::new(file), &id).map_err(|m| Error::format(path, m))
}

pub fn decode_geotiff<R: Read + Seek>(reader: R, id: &str) -> std::result::Result<GeoRaster, String> {
    let tiff_err = |e: tiff::TiffError| e.to_string();
    let mut dec = Decoder::new(reader)
        .map_err(tiff_err)?
        .with_limits(Limits::unlimited());
    let (width, height) = dec.dimensions().map_err(tiff_err)?;
    let bands = match dec.colortype().map_err(tiff_err)? {
        ColorType::Gray(8) => 1,
        ColorType::RGB(8) => 3,
        other => return Err(format!("unsupported pixel type {other:?}")),
    };
    if let Some(v) = dec.find_tag(Tag::PlanarConfiguration).map_err(tiff_err)? {
        if v.into_u16().map_err(tiff_err)? != 1 {
            return Err("only pixel-interleaved (chunky) layout is supported".into());
        }
    }
    let transform = read_transform(&mut dec)?;
    let crs_id = read_crs(&mut dec)?;
    let nodata = match dec.find_tag(Tag::GdalNodata).map_err(tiff_err)? {
        Some(v) => {
            let s = v.into_string().map_err(tiff_err)?;
            s.trim_matches(char::from(0))
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| (0.0..=255.0).contains(v) && v.fract() == 0.0)
                .map(|v| v as u8)
        }
        None => None,
    };
    let data = match dec.read_image().map_err(tiff_err)? {
        DecodingResult::U8(d) => d,
        _ => return Err("expected 8-bit samples".into()),
    };
    GeoRaster::new(
        id,
        width as usize,
        height as usize,
        bands,
        transform,
        crs_id,
        data,
    )
    .map(|r| r.with_nodata(nodata))
    .map_err(|e| e.to_string())
}

fn read_transform<R: Read + Seek>(
    dec: &mut Decoder<R>,
) -> std::result::Result<AffineGeoTransform, String> {
    let tiff_err = |e: tiff::TiffError| e.to_string();
    if let Some(v) = dec.find_tag(Tag::ModelTransformationTag).map_err(tiff_err)? {
        let m = v.into_f64_vec().map_err(tiff_err)?;
        if m.len() != 16 {
            return Err(format!("ModelTransformationTag has {} values", m.len()));
        }
        return AffineGeoTransform::new(m[3], m[7], m[0], m[5], m[1], m[4])
            .map_err(|e| e.to_string());
    }
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)
        .map_err(tiff_err)?
        .ok_or("missing georeferencing (no ModelTransformation or ModelPixelScale tag)")?
        .into_f64_vec()
        .map_err(tiff_err)?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)
        .map_err(tiff_err)?
        .ok_or("missing ModelTiepointTag")?
        .into_f64_vec()
        .map_err(tiff_err)?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err("malformed ModelPixelScale/ModelTiepoint tags".into());
    }
    let (sx, sy) = (scale[0], scale[1]);
    let (i, j, x, y) = (tie[0], tie[1], tie[3], tie[4]);
    AffineGeoTransform::new(x - i * sx, y + j * sy, sx, -sy, 0.0, 0.0).map_err(|e| e.to_string())
}

fn read_crs<R: Read + Seek>(dec: &mut Decoder<R>) -> std::result::Result<String, String> {
    let tiff_err = |e: tiff::TiffError| e.to_string();
    let Some(v) = dec.find_tag(Tag::GeoKeyDirectoryTag).map_err(tiff_err)? else {
        return Ok(UNKNOWN_CRS.into());
    };
    let keys = v.into_u16_vec().map_err(tiff_err)?;
    let mut projected = None;
    let mut geographic = None;
    // Header is 4 shorts, then (key, location, count, value) quadruples.
    for entry in keys.chunks_exact(4).skip(1) {
        let (key, location, value) = (entry[0], entry[1], entry[3]);
        if location != 0 {
            continue;
        }
        match key {
            PROJECTED_CS_TYPE_GEO_KEY => projected = Some(value),
            GEOGRAPHIC_TYPE_GEO_KEY => geographic = Some(value),
            _ => {}
        }
    }
    Ok(match projected.or(geographic) {
        Some(code) if code != 0 && code != 32767 => format!("EPSG:{code}"),
        _ => UNKNOWN_CRS.into(),
    })
}

fn epsg_code(crs_id: &str) -> Option<u16> {
    crs_id.strip_prefix("EPSG:")?.parse().ok()
}

pub fn write_geotiff(path: &Path, raster: &GeoRaster, compression: TiffCompression) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_geotiff(&mut w, raster, compression).map_err(|m| Error::format(path, m))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_geotiff<W: Write + Seek>(
    writer: W,
    raster: &GeoRaster,
    compression: TiffCompression,
) -> std::result::Result<(), String> {
    let tiff_err = |e: tiff::TiffError| e.to_string();
    let compression = match compression {
        TiffCompression::None => Compression::Uncompressed,
        TiffCompression::Deflate => Compression::Deflate(DeflateLevel::default()),
    };
    let mut enc = TiffEncoder::new(writer)
        .map_err(tiff_err)?
        .with_compression(compression);
    let (w, h) = (raster.width as u32, raster.height as u32);
    match raster.bands {
        1 => {
            let mut img = enc.new_image::<colortype::Gray8>(w, h).map_err(tiff_err)?;
            write_geo_tags(img.encoder(), raster).map_err(tiff_err)?;
            img.write_data(&raster.data).map_err(tiff_err)
        }
        3 => {
            let mut img = enc.new_image::<colortype::RGB8>(w, h).map_err(tiff_err)?;
            write_geo_tags(img.encoder(), raster).map_err(tiff_err)?;
            img.write_data(&raster.data).map_err(tiff_err)
        }
        n => Err(format!("cannot encode {n}-band raster")),
    }
}

fn write_geo_tags<W: Write + Seek, K: tiff::encoder::TiffKind>(
    dir: &mut tiff::encoder::DirectoryEncoder<'_, W, K>,
    raster: &GeoRaster,
) -> tiff::TiffResult<()> {
    let t = raster.transform;
    if !t.is_rotated() && t.pixel_height() < 0.0 {
        let o = t.origin();
        dir.write_tag(
            Tag::ModelPixelScaleTag,
            &[t.pixel_width(), -t.pixel_height(), 0.0][..],
        )?;
        dir.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, o.x, o.y, 0.0][..])?;
    } else {
        let o = t.origin();
        let m = [
            t.pixel_width(),
            t.row_rotation(),
            0.0,
            o.x,
            t.col_rotation(),
            t.pixel_height(),
            0.0,
            o.y,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        ];
        dir.write_tag(Tag::ModelTransformationTag, &m[..])?;
    }
    let mut keys: Vec<u16> = vec![
        1,
        1,
        0,
        2,
        GT_MODEL_TYPE_GEO_KEY,
        0,
        1,
        MODEL_TYPE_PROJECTED,
        GT_RASTER_TYPE_GEO_KEY,
        0,
        1,
        RASTER_PIXEL_IS_AREA,
    ];
    if let Some(code) = epsg_code(&raster.crs_id) {
        keys.extend_from_slice(&[PROJECTED_CS_TYPE_GEO_KEY, 0, 1, code]);
        keys[3] = 3;
    }
    dir.write_tag(Tag::GeoKeyDirectoryTag, &keys[..])?;
    if let Some(nd) = raster.nodata {
        dir.write_tag(Tag::GdalNodata, nd.to_string().as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample(bands: usize, crs: &str) -> GeoRaster {
        let (w, h) = (37, 23);
        let data = (0..w * h * bands).map(|i| (i * 7 % 256) as u8).collect();
        GeoRaster::new(
            "s",
            w,
            h,
            bands,
            AffineGeoTransform::north_up(3_100_000.0, 13_800_000.0, 1.640_42).unwrap(),
            crs,
            data,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_stripped_rgb_and_gray() {
        for (bands, comp) in [
            (3, TiffCompression::None),
            (1, TiffCompression::Deflate),
            (3, TiffCompression::Deflate),
        ] {
            let r = sample(bands, "EPSG:2278").with_nodata(Some(0));
            let mut buf = Cursor::new(Vec::new());
            encode_geotiff(&mut buf, &r, comp).unwrap();
            buf.set_position(0);
            let back = decode_geotiff(buf, "s").unwrap();
            assert_eq!(back, r);
        }
    }

    #[test]
    fn rotated_transform_uses_model_transformation() {
        let mut r = sample(1, "EPSG:32615");
        r.transform = AffineGeoTransform::new(10.0, 20.0, 0.5, -0.5, 0.05, 0.02).unwrap();
        let mut buf = Cursor::new(Vec::new());
        encode_geotiff(&mut buf, &r, TiffCompression::None).unwrap();
        buf.set_position(0);
        let back = decode_geotiff(buf, "s").unwrap();
        assert_eq!(back.transform, r.transform);
    }

    #[test]
    fn missing_epsg_reads_as_unknown() {
        let r = sample(1, "local");
        let mut buf = Cursor::new(Vec::new());
        encode_geotiff(&mut buf, &r, TiffCompression::None).unwrap();
        buf.set_position(0);
        assert_eq!(decode_geotiff(buf, "s").unwrap().crs_id, UNKNOWN_CRS);
    }

    #[test]
    fn plain_tiff_without_georeferencing_is_rejected() {
        let mut buf = Cursor::new(Vec::new());
        TiffEncoder::new(&mut buf)
            .unwrap()
            .write_image::<colortype::Gray8>(2, 2, &[1, 2, 3, 4])
            .unwrap();
        buf.set_position(0);
        let err = decode_geotiff(buf, "x").unwrap_err();
        assert!(err.contains("georeferencing"), "{err}");
    }
}
