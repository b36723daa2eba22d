//! PASCAL VOC annotation documents.

use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::BoundingBox;

#[derive(Debug, Error, PartialEq)]
pub enum VocError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml { line: usize, column: usize, message: String },
    #[error("missing element <{0}>")]
    Missing(&'static str),
    #[error("element <{element}> holds {value:?}, expected a non-negative integer")]
    BadNumber { element: String, value: String },
    #[error("object {index}: {reason}")]
    InvalidObject { index: usize, reason: String },
    #[error("image size must be positive")]
    EmptyImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
    pub depth: u32,
}

/// Integer pixel corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl PixelBox {
    pub fn to_bounding_box(self) -> BoundingBox {
        BoundingBox::new(self.xmin as f64, self.ymin as f64, self.xmax as f64, self.ymax as f64)
            .expect("validated pixel box")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocObject {
    pub name: String,
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub filename: String,
    pub size: ImageSize,
    pub objects: Vec<VocObject>,
}

impl AnnotationDoc {
    pub fn validate(&self) -> Result<(), VocError> {
        let ImageSize { width, height, .. } = self.size;
        if width == 0 || height == 0 {
            return Err(VocError::EmptyImage);
        }
        for (index, o) in self.objects.iter().enumerate() {
            let b = o.bbox;
            let reason = if b.xmin >= b.xmax || b.ymin >= b.ymax {
                Some(format!(
                    "inverted or empty box ({}, {}, {}, {})",
                    b.xmin, b.ymin, b.xmax, b.ymax
                ))
            } else if b.xmax > width || b.ymax > height {
                Some(format!(
                    "box ({}, {}, {}, {}) exceeds the {}x{} image",
                    b.xmin, b.ymin, b.xmax, b.ymax, width, height
                ))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(VocError::InvalidObject { index, reason });
            }
        }
        Ok(())
    }
}

fn line_col(bytes: &[u8], pos: usize) -> (usize, usize) {
    let pos = pos.min(bytes.len());
    let before = &bytes[..pos];
    let line = before.iter().filter(|b| **b == b'\n').count() + 1;
    let column = pos - before.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

fn number(element: &str, value: &str) -> Result<u32, VocError> {
    let bad = || VocError::BadNumber { element: element.to_string(), value: value.to_string() };
    if let Ok(v) = value.parse::<u32>() {
        return Ok(v);
    }
    // tolerate "12.0" from tools that write floats
    let f: f64 = value.parse().map_err(|_| bad())?;
    if f.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&f) {
        Ok(f as u32)
    } else {
        Err(bad())
    }
}

#[derive(Default)]
struct PartialObject {
    name: Option<String>,
    corners: [Option<u32>; 4],
}

/// Parses and validates a VOC annotation. Unknown elements are ignored.
pub fn parse_voc_xml(bytes: &[u8]) -> Result<AnnotationDoc, VocError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut path: Vec<String> = Vec::new();
    let mut filename = None;
    let (mut width, mut height, mut depth) = (None, None, None);
    let mut objects: Vec<PartialObject> = Vec::new();
    let mut saw_root = false;

    let xml_err = |reader: &Reader<&[u8]>, message: String| {
        let (line, column) = line_col(bytes, reader.error_position() as usize);
        VocError::Xml { line, column, message }
    };

    loop {
        let ev = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(&reader, e.to_string()))?;
        match ev {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                if path.is_empty() {
                    if name != "annotation" {
                        return Err(xml_err(&reader, format!("root element is <{name}>, expected <annotation>")));
                    }
                    saw_root = true;
                }
                path.push(name);
                if path == ["annotation", "object"] {
                    objects.push(PartialObject::default());
                }
            }
            Event::Empty(e) => {
                if path.is_empty() {
                    let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                    if name != "annotation" {
                        return Err(xml_err(&reader, format!("root element is <{name}>, expected <annotation>")));
                    }
                    saw_root = true;
                }
            }
            Event::End(_) => {
                path.pop();
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| xml_err(&reader, e.to_string()))?.into_owned();
                assign(&path, text, &mut filename, [&mut width, &mut height, &mut depth], &mut objects)?;
            }
            Event::CData(c) => {
                let text = String::from_utf8_lossy(&c.into_inner()).into_owned();
                assign(&path, text, &mut filename, [&mut width, &mut height, &mut depth], &mut objects)?;
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !saw_root {
        return Err(VocError::Missing("annotation"));
    }
    if !path.is_empty() {
        let (line, column) = line_col(bytes, bytes.len());
        return Err(VocError::Xml { line, column, message: format!("unclosed <{}>", path.join("/")) });
    }

    let size = ImageSize {
        width: width.ok_or(VocError::Missing("width"))?,
        height: height.ok_or(VocError::Missing("height"))?,
        depth: depth.unwrap_or(3),
    };
    let objects = objects
        .into_iter()
        .enumerate()
        .map(|(index, o)| {
            let missing = |what: &str| VocError::InvalidObject { index, reason: format!("missing <{what}>") };
            let [xmin, ymin, xmax, ymax] = o.corners;
            Ok(VocObject {
                name: o.name.ok_or_else(|| missing("name"))?,
                bbox: PixelBox {
                    xmin: xmin.ok_or_else(|| missing("xmin"))?,
                    ymin: ymin.ok_or_else(|| missing("ymin"))?,
                    xmax: xmax.ok_or_else(|| missing("xmax"))?,
                    ymax: ymax.ok_or_else(|| missing("ymax"))?,
                },
            })
        })
        .collect::<Result<Vec<_>, VocError>>()?;
    let doc = AnnotationDoc { filename: filename.ok_or(VocError::Missing("filename"))?, size, objects };
    doc.validate()?;
    Ok(doc)
}

fn assign(
    path: &[String],
    text: String,
    filename: &mut Option<String>,
    size: [&mut Option<u32>; 3],
    objects: &mut [PartialObject],
) -> Result<(), VocError> {
    let p: Vec<&str> = path.iter().map(String::as_str).collect();
    let [width, height, depth] = size;
    match p.as_slice() {
        ["annotation", "filename"] => *filename = Some(text),
        ["annotation", "size", dim @ ("width" | "height" | "depth")] => {
            let v = number(dim, &text)?;
            match *dim {
                "width" => *width = Some(v),
                "height" => *height = Some(v),
                _ => *depth = Some(v),
            }
        }
        ["annotation", "object", "name"] => {
            if let Some(o) = objects.last_mut() {
                o.name = Some(text);
            }
        }
        ["annotation", "object", "bndbox", c @ ("xmin" | "ymin" | "xmax" | "ymax")] => {
            let v = number(c, &text)?;
            let i = ["xmin", "ymin", "xmax", "ymax"].iter().position(|k| k == c).expect("matched");
            if let Some(o) = objects.last_mut() {
                o.corners[i] = Some(v);
            }
        }
        _ => {}
    }
    Ok(())
}

/// Canonical serialization: filename, size, then objects in order.
pub fn serialize_voc_xml(doc: &AnnotationDoc) -> Vec<u8> {
    let mut s = String::from("<annotation>\n");
    s += &format!("\t<filename>{}</filename>\n", escape(doc.filename.as_str()));
    s += &format!(
        "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>{}</depth>\n\t</size>\n",
        doc.size.width, doc.size.height, doc.size.depth
    );
    for o in &doc.objects {
        let b = o.bbox;
        s += &format!(
            "\t<object>\n\t\t<name>{}</name>\n\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>\n",
            escape(o.name.as_str()),
            b.xmin,
            b.ymin,
            b.xmax,
            b.ymax
        );
    }
    s += "</annotation>\n";
    s.into_bytes()
}
