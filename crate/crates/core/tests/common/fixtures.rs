//! Shared inputs: the golden SMTP session, fuzz sessions, random VOC docs,
//! and the published species counts.
#![allow(dead_code)]

use biopay_core::ingest::{AnnotationDoc, ImageSize, PixelBox, VocObject};
use rand::Rng;

/// First bytes of a JPEG followed by filler; pixels are never decoded.
pub const JPEG_BYTES: &[u8] = b"\xff\xd8\xff\xe0\x00\x10JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00fake-pixels\xff\xd9";

pub fn golden_session() -> String {
    use base64::Engine;
    let b64 = base64::engine::general_purpose::STANDARD.encode(JPEG_BYTES);
    [
        "EHLO camera07.reserve",
        "MAIL FROM:<camera07@reserve>",
        "RCPT TO:<ingest@biopay.local>",
        "DATA",
        "From: camera07@reserve",
        "To: ingest@biopay.local",
        "Subject: PIR trigger 0042",
        "Date: Tue, 14 Jun 2022 05:31:07 +0000",
        "MIME-Version: 1.0",
        "Content-Type: multipart/mixed; boundary=\"cam-boundary\"",
        "",
        "--cam-boundary",
        "Content-Type: text/plain; charset=us-ascii",
        "",
        "Motion detected",
        "--cam-boundary",
        "Content-Type: image/jpeg; name=\"IMG_0042.JPG\"",
        "Content-Transfer-Encoding: base64",
        "Content-Disposition: attachment; filename=\"IMG_0042.JPG\"",
        "",
        &b64,
        "--cam-boundary--",
        ".",
        "QUIT",
        "",
    ]
    .join("\r\n")
}

/// Expected reply codes for [`golden_session`], in order.
pub const GOLDEN_CODES: [u16; 7] = [220, 250, 250, 250, 354, 250, 221];

const WORDS: [&[u8]; 14] = [
    b"HELO x", b"EHLO y", b"MAIL FROM:<a@b>", b"RCPT TO:<c@d>", b"DATA", b".", b"QUIT", b"RSET", b"NOOP",
    b"MAIL FROM:", b"RCPT TO:<", b"Content-Type: multipart/mixed; boundary=z", b"--z", b"\xff\xfe\x00",
];

/// Random session bytes mixing protocol fragments with noise.
pub fn fuzz_session(rng: &mut impl Rng) -> Vec<u8> {
    let mut out = Vec::new();
    for _ in 0..rng.random_range(0..24) {
        match rng.random_range(0..4) {
            0 => {
                let n = rng.random_range(0..64);
                out.extend((0..n).map(|_| rng.random::<u8>()));
            }
            1 => out.extend(std::iter::repeat_n(b'A', rng.random_range(900..1200))),
            _ => out.extend_from_slice(WORDS[rng.random_range(0..WORDS.len())]),
        }
        match rng.random_range(0..5) {
            0 => {}
            1 => out.push(b'\n'),
            _ => out.extend_from_slice(b"\r\n"),
        }
    }
    out
}

/// Text that survives XML without escaping surprises: printable, no edge
/// whitespace.
fn name(rng: &mut impl Rng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-.&<>'\"";
    loop {
        let n = rng.random_range(1..20);
        let s: String = (0..n).map(|_| CHARS[rng.random_range(0..CHARS.len())] as char).collect();
        let t = s.trim().to_string();
        if !t.is_empty() {
            return t;
        }
    }
}

pub fn random_voc_doc(rng: &mut impl Rng) -> AnnotationDoc {
    let width = rng.random_range(1..4000);
    let height = rng.random_range(1..4000);
    let objects = (0..rng.random_range(0..6))
        .map(|_| {
            let xmin = rng.random_range(0..width);
            let ymin = rng.random_range(0..height);
            VocObject {
                name: name(rng),
                bbox: PixelBox {
                    xmin,
                    ymin,
                    xmax: rng.random_range(xmin + 1..=width),
                    ymax: rng.random_range(ymin + 1..=height),
                },
            }
        })
        .collect();
    AnnotationDoc {
        filename: format!("{}.jpg", name(rng)),
        size: ImageSize { width, height, depth: rng.random_range(1..=4) },
        objects,
    }
}

/// Species counts as published, in table order.
pub const TABLE7: [(&str, u64, &str); 12] = [
    ("Canis mesomelas", 34, "0.34"),
    ("Hystrix cristata", 37, "0.37"),
    ("Crocuta crocuta", 58, "0.58"),
    ("Loxodonta africana", 148, "1.48"),
    ("Acinonyx jubatus", 222, "2.22"),
    ("Papio sp", 748, "7.48"),
    ("Rhinocerotidae", 998, "9.98"),
    ("Connochaetes taurinus", 1022, "10.22"),
    ("Tragelaphus oryx", 1058, "10.58"),
    ("Giraffa camelopardalis", 2646, "26.46"),
    ("Panthera leo", 4391, "43.91"),
    ("Equus quagga", 7158, "71.58"),
];

pub fn table7_counts() -> Vec<(String, u64)> {
    TABLE7.iter().map(|(s, n, _)| (s.to_string(), *n)).collect()
}
