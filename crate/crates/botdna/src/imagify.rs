//! DNA-to-image conversion: paint a sequence onto the smallest square
//! canvas that fits the longest sequence of the corpus, expand to three
//! identical channels, and resize to 256×256 with nearest-neighbor
//! sampling (symbols are categorical; interpolation would invent
//! intensities that belong to no symbol).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dna::{Alphabet, DnaSequence, EncodedCorpus};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("canvas size must be at least 1, got {0}")]
    EmptyCanvas(usize),
    #[error("side {side} too small for sequence of length {len}")]
    SideTooSmall { side: usize, len: usize },
    #[error("palette alphabet {palette} does not match sequence alphabet {sequence}")]
    AlphabetMismatch {
        palette: Alphabet,
        sequence: Alphabet,
    },
    #[error("palette for {alphabet} assigns level {level} twice")]
    DuplicateLevel { alphabet: Alphabet, level: u8 },
    #[error("palette symbol '{symbol}' collides with the pad level {level}")]
    PadCollision { symbol: char, level: u8 },
    #[error("symbol '{0}' not covered by the palette")]
    UnknownSymbol(char),
    #[error("image already has 3 channels")]
    AlreadyThreeChannels,
    #[error("expected {expected} channels, got {got}")]
    WrongChannels { expected: usize, got: usize },
    #[error("bad tensor dump: {0}")]
    BadDump(String),
}

/// Symbol → 8-bit intensity assignment. Levels must be pairwise
/// distinct and distinct from the pad level, otherwise painting would
/// not be invertible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub alphabet: Alphabet,
    pub levels: Vec<(char, u8)>,
    pub pad_level: u8,
}

impl Palette {
    /// Evenly spaced defaults with 0 reserved for padding:
    /// Type3 A=85, C=170, T=255; Content5 N=51, U=102, H=153, M=204, X=255.
    pub fn default_for(alphabet: Alphabet) -> Palette {
        let symbols = alphabet.symbols();
        let step = 255 / symbols.len() as u16;
        let levels = symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, ((i as u16 + 1) * step) as u8))
            .collect();
        Palette {
            alphabet,
            levels,
            pad_level: 0,
        }
    }

    pub fn with_levels(
        alphabet: Alphabet,
        levels: Vec<(char, u8)>,
        pad_level: u8,
    ) -> Result<Palette, ImageError> {
        let palette = Palette {
            alphabet,
            levels,
            pad_level,
        };
        palette.validate()?;
        Ok(palette)
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        let mut seen = std::collections::HashSet::new();
        for &(symbol, level) in &self.levels {
            if !seen.insert(level) {
                return Err(ImageError::DuplicateLevel {
                    alphabet: self.alphabet,
                    level,
                });
            }
            if level == self.pad_level {
                return Err(ImageError::PadCollision { symbol, level });
            }
        }
        Ok(())
    }

    pub fn level(&self, symbol: char) -> Result<u8, ImageError> {
        self.levels
            .iter()
            .find(|&&(c, _)| c == symbol)
            .map(|&(_, l)| l)
            .ok_or(ImageError::UnknownSymbol(symbol))
    }

    /// Inverse lookup; `None` for the pad level or unassigned levels.
    pub fn symbol_for_level(&self, level: u8) -> Option<char> {
        self.levels.iter().find(|&&(_, l)| l == level).map(|&(c, _)| c)
    }

    /// Content hash over alphabet, symbol levels, and pad level,
    /// recorded in render manifests so palette changes are visible.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.alphabet.name().as_bytes());
        for &(c, l) in &self.levels {
            hasher.update([c as u8, l]);
        }
        hasher.update([self.pad_level]);
        hex_lower(&hasher.finalize())
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// An 8-bit pixel grid of shape (channels, side, side), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnaImage {
    pub user_id: String,
    pub side: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl DnaImage {
    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.pixels[channel * self.side * self.side + row * self.side + col]
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        let n = self.side * self.side;
        &self.pixels[channel * n..(channel + 1) * n]
    }
}

/// Smallest integer side whose square holds `max_len` cells:
/// `ceil(sqrt(max_len))`.
pub fn canvas_side(max_len: usize) -> Result<usize, ImageError> {
    if max_len == 0 {
        return Err(ImageError::EmptyCanvas(max_len));
    }
    let mut s = (max_len as f64).sqrt() as usize;
    while s * s < max_len {
        s += 1;
    }
    while s > 1 && (s - 1) * (s - 1) >= max_len {
        s -= 1;
    }
    Ok(s)
}

/// Paints the sequence row-major, left-to-right, top-to-bottom; cells
/// past the end of the sequence take the pad level.
pub fn paint(seq: &DnaSequence, side: usize, palette: &Palette) -> Result<DnaImage, ImageError> {
    if palette.alphabet != seq.alphabet {
        return Err(ImageError::AlphabetMismatch {
            palette: palette.alphabet,
            sequence: seq.alphabet,
        });
    }
    let len = seq.seq.chars().count();
    if side * side < len {
        return Err(ImageError::SideTooSmall { side, len });
    }
    let mut pixels = vec![palette.pad_level; side * side];
    for (k, c) in seq.seq.chars().enumerate() {
        pixels[k] = palette.level(c)?;
    }
    Ok(DnaImage {
        user_id: seq.user_id.clone(),
        side,
        channels: 1,
        pixels,
    })
}

/// Replicates the single plane into three identical channels.
pub fn to_three_channels(img: &DnaImage) -> Result<DnaImage, ImageError> {
    if img.channels == 3 {
        return Err(ImageError::AlreadyThreeChannels);
    }
    if img.channels != 1 {
        return Err(ImageError::WrongChannels {
            expected: 1,
            got: img.channels,
        });
    }
    let mut pixels = Vec::with_capacity(img.pixels.len() * 3);
    for _ in 0..3 {
        pixels.extend_from_slice(&img.pixels);
    }
    Ok(DnaImage {
        user_id: img.user_id.clone(),
        side: img.side,
        channels: 3,
        pixels,
    })
}

/// Nearest-neighbor resize: output pixel (i, j) reads input pixel
/// (floor(i·side/target), floor(j·side/target)). No new intensity
/// values are introduced.
pub fn resize_nn(img: &DnaImage, target: usize) -> Result<DnaImage, ImageError> {
    if img.side == 0 {
        return Err(ImageError::EmptyCanvas(0));
    }
    if img.side == target {
        return Ok(img.clone());
    }
    let side = img.side;
    let mut pixels = vec![0u8; img.channels * target * target];
    // per-axis source indices are shared by every row/column
    let src: Vec<usize> = (0..target).map(|i| i * side / target).collect();
    for c in 0..img.channels {
        let plane = img.plane(c);
        let out = &mut pixels[c * target * target..(c + 1) * target * target];
        for i in 0..target {
            let row = &plane[src[i] * side..src[i] * side + side];
            for j in 0..target {
                out[i * target + j] = row[src[j]];
            }
        }
    }
    Ok(DnaImage {
        user_id: img.user_id.clone(),
        side: target,
        channels: img.channels,
        pixels,
    })
}

/// Full per-user conversion used by both the renderer and the model
/// pipeline: paint on the shared canvas, expand to 3 channels, resize.
pub fn sequence_to_image(
    seq: &DnaSequence,
    canvas: usize,
    palette: &Palette,
    target: usize,
) -> Result<DnaImage, ImageError> {
    let gray = paint(seq, canvas, palette)?;
    let rgb = to_three_channels(&gray)?;
    resize_nn(&rgb, target)
}

pub const RENDER_TARGET: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub user_id: String,
    pub alphabet: Alphabet,
    pub side: usize,
    pub path: PathBuf,
    pub palette_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderManifest {
    pub canvas_side: usize,
    pub rows: Vec<ManifestRow>,
}

impl RenderManifest {
    /// Tab-separated rows: user_id, alphabet, side, path, palette_hash.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        writeln!(w, "user_id\talphabet\tside\tpath\tpalette_hash")?;
        for row in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                row.user_id,
                row.alphabet,
                row.side,
                row.path.display(),
                row.palette_hash
            )?;
        }
        Ok(())
    }
}

/// Renders every sequence of the corpus on the shared canvas side,
/// writing `<user_id>.<alphabet>.png` plus a raw tensor dump next to
/// it, and returns the manifest. Rows are sorted by user id.
pub fn render_corpus(
    enc: &EncodedCorpus,
    palette: &Palette,
    out_dir: &Path,
) -> Result<RenderManifest, ImageError> {
    use rayon::prelude::*;
    if palette.alphabet != enc.alphabet {
        return Err(ImageError::AlphabetMismatch {
            palette: palette.alphabet,
            sequence: enc.alphabet,
        });
    }
    palette.validate()?;
    for seq in enc.sequences.values() {
        if seq.alphabet != enc.alphabet {
            return Err(ImageError::AlphabetMismatch {
                palette: enc.alphabet,
                sequence: seq.alphabet,
            });
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let canvas = canvas_side(enc.max_len)?;
    let palette_hash = palette.hash();

    let sequences: Vec<&DnaSequence> = enc.sequences.values().collect();
    let rows: Vec<ManifestRow> = sequences
        .par_iter()
        .map(|seq| -> Result<ManifestRow, ImageError> {
            let img = sequence_to_image(seq, canvas, palette, RENDER_TARGET)?;
            let stem = format!("{}.{}", seq.user_id, seq.alphabet);
            let png_path = out_dir.join(format!("{stem}.png"));
            write_png(&img, &png_path)?;
            write_tensor_dump(&img, &out_dir.join(format!("{stem}.bdna")))?;
            Ok(ManifestRow {
                user_id: seq.user_id.clone(),
                alphabet: seq.alphabet,
                side: canvas,
                path: png_path,
                palette_hash: palette_hash.clone(),
            })
        })
        .collect::<Result<_, _>>()?;

    Ok(RenderManifest {
        canvas_side: canvas,
        rows,
    })
}

/// 8-bit RGB PNG, no alpha.
pub fn write_png(img: &DnaImage, path: &Path) -> Result<(), ImageError> {
    if img.channels != 3 {
        return Err(ImageError::WrongChannels {
            expected: 3,
            got: img.channels,
        });
    }
    let side = img.side as u32;
    let mut interleaved = Vec::with_capacity(img.pixels.len());
    for idx in 0..img.side * img.side {
        for c in 0..3 {
            interleaved.push(img.plane(c)[idx]);
        }
    }
    let buffer = image::RgbImage::from_raw(side, side, interleaved)
        .expect("buffer length matches dimensions");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageError::Io(std::io::Error::other(e)))?;
    Ok(())
}

const DUMP_MAGIC: &[u8; 5] = b"BDNA1";

/// Raw little-endian dump: magic `BDNA1`, u32 channels, u32 height,
/// u32 width, then channels·height·width bytes.
pub fn write_tensor_dump(img: &DnaImage, path: &Path) -> Result<(), ImageError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(img.channels as u32).to_le_bytes())?;
    w.write_all(&(img.side as u32).to_le_bytes())?;
    w.write_all(&(img.side as u32).to_le_bytes())?;
    w.write_all(&img.pixels)?;
    Ok(())
}

pub fn read_tensor_dump(path: &Path) -> Result<DnaImage, ImageError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(ImageError::BadDump(format!(
            "bad magic {:?}, expected {:?}",
            magic, DUMP_MAGIC
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let channels = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let height = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let width = u32::from_le_bytes(word) as usize;
    if height != width {
        return Err(ImageError::BadDump(format!(
            "non-square dump {height}x{width}"
        )));
    }
    let mut pixels = vec![0u8; channels * height * width];
    r.read_exact(&mut pixels)?;
    let user_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DnaImage {
        user_id,
        side: height,
        channels,
        pixels,
    })
}

/// Minimal polyline SVG of an LCS curve; display artifact only.
pub fn curve_svg(points: &[(usize, usize)]) -> String {
    let width = 640.0;
    let height = 400.0;
    let margin = 40.0;
    let max_k = points.iter().map(|&(k, _)| k).max().unwrap_or(2) as f64;
    let min_k = points.iter().map(|&(k, _)| k).min().unwrap_or(2) as f64;
    let max_len = points.iter().map(|&(_, l)| l).max().unwrap_or(1).max(1) as f64;
    let x = |k: f64| margin + (k - min_k) / (max_k - min_k).max(1.0) * (width - 2.0 * margin);
    let y = |l: f64| height - margin - l / max_len * (height - 2.0 * margin);
    let path: Vec<String> = points
        .iter()
        .map(|&(k, l)| format!("{:.1},{:.1}", x(k as f64), y(l as f64)))
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"{}\"/>\n\
         </svg>\n",
        path.join(" ")
    )
}

/// Sorted (user_id, image) pairs for in-memory pipelines.
pub fn render_corpus_in_memory(
    enc: &EncodedCorpus,
    palette: &Palette,
) -> Result<BTreeMap<String, DnaImage>, ImageError> {
    if palette.alphabet != enc.alphabet {
        return Err(ImageError::AlphabetMismatch {
            palette: palette.alphabet,
            sequence: enc.alphabet,
        });
    }
    palette.validate()?;
    let canvas = canvas_side(enc.max_len)?;
    enc.sequences
        .iter()
        .map(|(id, seq)| {
            sequence_to_image(seq, canvas, palette, RENDER_TARGET).map(|img| (id.clone(), img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str, alphabet: Alphabet) -> DnaSequence {
        DnaSequence {
            user_id: "u1".into(),
            alphabet,
            seq: s.into(),
        }
    }

    #[test]
    fn default_palettes_match_documented_levels() {
        let t3 = Palette::default_for(Alphabet::Type3);
        assert_eq!(t3.levels, vec![('A', 85), ('C', 170), ('T', 255)]);
        assert_eq!(t3.pad_level, 0);
        let c5 = Palette::default_for(Alphabet::Content5);
        assert_eq!(
            c5.levels,
            vec![('N', 51), ('U', 102), ('H', 153), ('M', 204), ('X', 255)]
        );
        t3.validate().unwrap();
        c5.validate().unwrap();
    }

    #[test]
    fn canvas_side_examples() {
        assert_eq!(canvas_side(9).unwrap(), 3);
        assert_eq!(canvas_side(10).unwrap(), 4);
        // 14² = 196 < 200 ≤ 225 = 15²
        assert_eq!(canvas_side(200).unwrap(), 15);
        assert!(canvas_side(0).is_err());
    }

    #[test]
    fn canvas_side_is_ceil_sqrt_on_a_range() {
        for n in 1..=5000usize {
            let s = canvas_side(n).unwrap();
            assert!(s * s >= n, "n={n} s={s}");
            assert!((s - 1) * (s - 1) < n, "n={n} s={s}");
        }
    }

    #[test]
    fn paint_fills_row_major_and_pads() {
        let palette = Palette::default_for(Alphabet::Type3);
        let img = paint(&seq("AC", Alphabet::Type3), 2, &palette).unwrap();
        assert_eq!(img.pixels, vec![85, 170, 0, 0]);
    }

    #[test]
    fn paint_single_symbol() {
        let palette = Palette::default_for(Alphabet::Type3);
        let img = paint(&seq("A", Alphabet::Type3), 1, &palette).unwrap();
        assert_eq!(img.pixels, vec![85]);
    }

    #[test]
    fn paint_all_t_saturates() {
        let palette = Palette::default_for(Alphabet::Type3);
        let img = paint(&seq(&"T".repeat(9), Alphabet::Type3), 3, &palette).unwrap();
        assert_eq!(img.pixels, vec![255; 9]);
    }

    #[test]
    fn paint_rejects_small_canvas() {
        let palette = Palette::default_for(Alphabet::Type3);
        let err = paint(&seq("ACTA", Alphabet::Type3), 1, &palette).unwrap_err();
        assert!(matches!(err, ImageError::SideTooSmall { side: 1, len: 4 }));
    }

    #[test]
    fn paint_rejects_alphabet_mismatch() {
        let palette = Palette::default_for(Alphabet::Content5);
        assert!(matches!(
            paint(&seq("A", Alphabet::Type3), 1, &palette),
            Err(ImageError::AlphabetMismatch { .. })
        ));
    }

    #[test]
    fn three_channels_replicates_planes() {
        let palette = Palette::default_for(Alphabet::Type3);
        let gray = paint(&seq("AC", Alphabet::Type3), 2, &palette).unwrap();
        let rgb = to_three_channels(&gray).unwrap();
        assert_eq!(rgb.channels, 3);
        for c in 0..3 {
            assert_eq!(rgb.plane(c), &[85, 170, 0, 0]);
        }
        assert!(matches!(
            to_three_channels(&rgb),
            Err(ImageError::AlreadyThreeChannels)
        ));
    }

    #[test]
    fn resize_identity_at_target_side() {
        let img = DnaImage {
            user_id: "u".into(),
            side: 4,
            channels: 1,
            pixels: (0..16).map(|i| i as u8).collect(),
        };
        assert_eq!(resize_nn(&img, 4).unwrap(), img);
    }

    #[test]
    fn resize_constant_from_single_pixel() {
        let img = DnaImage {
            user_id: "u".into(),
            side: 1,
            channels: 1,
            pixels: vec![85],
        };
        let big = resize_nn(&img, 256).unwrap();
        assert_eq!(big.side, 256);
        assert!(big.pixels.iter().all(|&p| p == 85));
    }

    #[test]
    fn resize_two_by_two_gives_quadrant_blocks() {
        let img = DnaImage {
            user_id: "u".into(),
            side: 2,
            channels: 1,
            pixels: vec![85, 170, 0, 0],
        };
        let big = resize_nn(&img, 256).unwrap();
        // block corners per the index formula floor(i·2/256)
        assert_eq!(big.pixel(0, 0, 0), 85);
        assert_eq!(big.pixel(0, 0, 127), 85);
        assert_eq!(big.pixel(0, 0, 128), 170);
        assert_eq!(big.pixel(0, 127, 255), 170);
        assert_eq!(big.pixel(0, 128, 0), 0);
        assert_eq!(big.pixel(0, 255, 255), 0);
    }

    #[test]
    fn resize_introduces_no_new_intensities() {
        let img = DnaImage {
            user_id: "u".into(),
            side: 3,
            channels: 1,
            pixels: vec![85, 170, 0, 0, 255, 85, 170, 0, 85],
        };
        let input_set: std::collections::HashSet<u8> = img.pixels.iter().copied().collect();
        let big = resize_nn(&img, 256).unwrap();
        let output_set: std::collections::HashSet<u8> = big.pixels.iter().copied().collect();
        assert!(output_set.is_subset(&input_set));
    }

    #[test]
    fn unpaint_recovers_sequence() {
        let palette = Palette::default_for(Alphabet::Content5);
        let dna = seq("NUHMXXNU", Alphabet::Content5);
        let img = paint(&dna, 3, &palette).unwrap();
        let recovered: String = img.pixels[..dna.seq.len()]
            .iter()
            .map(|&p| palette.symbol_for_level(p).unwrap())
            .collect();
        assert_eq!(recovered, dna.seq);
    }

    #[test]
    fn duplicate_palette_level_rejected() {
        let err = Palette::with_levels(Alphabet::Type3, vec![('A', 85), ('C', 85), ('T', 255)], 0)
            .unwrap_err();
        assert!(matches!(err, ImageError::DuplicateLevel { level: 85, .. }));
        let err =
            Palette::with_levels(Alphabet::Type3, vec![('A', 0), ('C', 85), ('T', 255)], 0)
                .unwrap_err();
        assert!(matches!(err, ImageError::PadCollision { symbol: 'A', .. }));
    }

    #[test]
    fn tensor_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let palette = Palette::default_for(Alphabet::Type3);
        let img = sequence_to_image(&seq("ACT", Alphabet::Type3), 2, &palette, 8).unwrap();
        let path = dir.path().join("u1.Type3.bdna");
        write_tensor_dump(&img, &path).unwrap();
        let back = read_tensor_dump(&path).unwrap();
        assert_eq!(back.pixels, img.pixels);
        assert_eq!(back.side, 8);
        assert_eq!(back.channels, 3);
    }

    #[test]
    fn renders_share_canvas_side() {
        let mut sequences = BTreeMap::new();
        for (id, s) in [("a", "ACT"), ("b", "ACTACTA"), ("c", "ACTAC")] {
            sequences.insert(
                id.to_string(),
                DnaSequence {
                    user_id: id.into(),
                    alphabet: Alphabet::Type3,
                    seq: s.into(),
                },
            );
        }
        let enc = EncodedCorpus {
            alphabet: Alphabet::Type3,
            sequences,
            max_len: 7,
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            render_corpus(&enc, &Palette::default_for(Alphabet::Type3), dir.path()).unwrap();
        assert_eq!(manifest.canvas_side, 3);
        assert_eq!(manifest.rows.len(), 3);
        assert!(manifest.rows.iter().all(|r| r.side == 3));
        assert!(manifest.rows.iter().all(|r| r.path.exists()));
    }

    #[test]
    fn rerender_is_bit_identical() {
        let mut sequences = BTreeMap::new();
        sequences.insert(
            "a".to_string(),
            DnaSequence {
                user_id: "a".into(),
                alphabet: Alphabet::Type3,
                seq: "ACTTA".into(),
            },
        );
        let enc = EncodedCorpus {
            alphabet: Alphabet::Type3,
            sequences,
            max_len: 5,
        };
        let palette = Palette::default_for(Alphabet::Type3);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        render_corpus(&enc, &palette, d1.path()).unwrap();
        render_corpus(&enc, &palette, d2.path()).unwrap();
        let bytes = |d: &Path| std::fs::read(d.join("a.Type3.png")).unwrap();
        assert_eq!(bytes(d1.path()), bytes(d2.path()));
    }
}
