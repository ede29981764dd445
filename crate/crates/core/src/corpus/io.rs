//! Binary PPM/PGM files and the dataset directory layout.
//!
//! ```text
//! dir/manifest.tsv      id <TAB> images/ID.ppm <TAB> labels/ID.pgm|- <TAB> split
//! dir/test.tsv          held-out rows, same columns, split `test`
//! dir/categories.tsv    id <TAB> name
//! dir/images/ID.ppm
//! dir/labels/ID.pgm     labeled and test samples
//! dir/hidden/ID.pgm     evaluation-only labels of unlabeled samples
//! ```

use std::fs;
use std::path::Path;

use super::{CategoryTable, Corpus, HiddenLabels, Image, LabelMap, Sample, Split};
use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_pgm(path: &Path, label: &LabelMap) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", label.width, label.height).into_bytes();
    out.extend_from_slice(&label.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let (w, h, body) = parse_netpbm(&bytes, b"P6").map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Image::new(w, h, body.to_vec())
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path)?;
    let (w, h, body) = parse_netpbm(&bytes, b"P5").map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    LabelMap::new(w, h, body.to_vec())
}

/// Splits a binary netpbm file into width, height and pixel bytes.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8]) -> std::result::Result<(usize, usize, &'a [u8]), String> {
    if !bytes.starts_with(magic) {
        return Err(format!("expected {} header", String::from_utf8_lossy(magic)));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or("malformed header")?;
    }
    if fields[2] != 255 {
        return Err(format!("maxval {} unsupported, expected 255", fields[2]));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    let body = &bytes[pos + 1..];
    let channels = if magic == b"P6" { 3 } else { 1 };
    if body.len() != fields[0] * fields[1] * channels {
        return Err(format!("expected {} pixel bytes, found {}", fields[0] * fields[1] * channels, body.len()));
    }
    Ok((fields[0], fields[1], body))
}

/// Writes a corpus, plus hidden labels when given.
pub fn save_corpus(dir: &Path, corpus: &Corpus, hidden: Option<&HiddenLabels>) -> Result<()> {
    for sub in ["images", "labels", "hidden"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let (mut manifest, mut test) = (String::new(), String::new());
    for s in &corpus.samples {
        let image = format!("images/{}.ppm", s.id);
        write_ppm(&dir.join(&image), &s.image)?;
        let label = match &s.label {
            Some(l) => {
                let p = format!("labels/{}.pgm", s.id);
                write_pgm(&dir.join(&p), l)?;
                p
            }
            None => "-".to_string(),
        };
        let row = format!("{}\t{image}\t{label}\t{}\n", s.id, s.split.as_str());
        if s.split == Split::Test {
            test.push_str(&row);
        } else {
            manifest.push_str(&row);
        }
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    if !test.is_empty() {
        fs::write(dir.join("test.tsv"), test)?;
    }
    let cats: String = corpus.categories.names.iter().enumerate().map(|(i, n)| format!("{i}\t{n}\n")).collect();
    fs::write(dir.join("categories.tsv"), cats)?;
    if let Some(h) = hidden {
        for (id, l) in &h.0 {
            write_pgm(&dir.join(format!("hidden/{id}.pgm")), l)?;
        }
    }
    Ok(())
}

/// Reads a corpus directory, including `test.tsv` when present. Hidden
/// labels are not touched.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.join("manifest.tsv").is_file() {
        return Err(Error::Data(format!("{} is not a dataset directory (no manifest.tsv)", dir.display())));
    }
    let cats = fs::read_to_string(dir.join("categories.tsv"))?;
    let categories = CategoryTable::new(cats.lines().filter(|l| !l.trim().is_empty()).count())?;
    let mut samples = Vec::new();
    read_rows(dir, "manifest.tsv", &categories, &mut samples)?;
    if dir.join("test.tsv").exists() {
        read_rows(dir, "test.tsv", &categories, &mut samples)?;
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = samples.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(Error::Data(format!("sample id {} listed twice", dup.id)));
    }
    Ok(Corpus { categories, samples })
}

fn read_rows(dir: &Path, file: &str, categories: &CategoryTable, samples: &mut Vec<Sample>) -> Result<()> {
    let rows = fs::read_to_string(dir.join(file))?;
    for (n, line) in rows.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::Data(format!("{file} line {}: {msg}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(at(format!("expected 4 columns, got {}", cols.len())));
        }
        let split = Split::parse(cols[3])?;
        let image = read_ppm(&dir.join(cols[1]))?;
        let label = match (cols[2], split) {
            ("-", Split::Unlabeled) => None,
            ("-", _) => return Err(at(format!("{} sample without label", cols[3]))),
            (_, Split::Unlabeled) => return Err(at("unlabeled sample lists a label".into())),
            (p, _) => {
                let l = read_pgm(&dir.join(p))?;
                if (l.width, l.height) != (image.width, image.height) {
                    return Err(Error::Data(format!("{p}: size differs from its image")));
                }
                l.check_range(categories.len())?;
                Some(l)
            }
        };
        samples.push(Sample {
            id: cols[0].to_string(),
            split,
            image,
            label,
            pseudo_label: None,
            rectified_label: None,
        });
    }
    Ok(())
}

/// Reads the evaluation-only labels of every unlabeled sample in `corpus`.
pub fn load_hidden(dir: &Path, corpus: &Corpus) -> Result<HiddenLabels> {
    let mut out = HiddenLabels::default();
    for s in corpus.split(Split::Unlabeled) {
        let l = read_pgm(&dir.join(format!("hidden/{}.pgm", s.id)))?;
        l.check_range(corpus.categories.len())?;
        out.0.insert(s.id.clone(), l);
    }
    Ok(out)
}
