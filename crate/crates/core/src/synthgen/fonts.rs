//! Built-in bitmap typefaces.
//!
//! Glyphs are designed on a 9-row grid: rows 0-1 hold ascenders and accents,
//! rows 2-6 the x-height with the baseline at row 6, rows 7-8 descenders.
//! Font A renders the designs as drawn. Font B is a bold oblique cut of the
//! same letters and has its own exclusive characters.

use std::collections::BTreeMap;

pub(crate) const DESIGN_ROWS: usize = 9;

type Design = (char, [&'static str; DESIGN_ROWS]);

const SHARED: &[Design] = &[
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####", ".....", "....."]),
    ('b', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####.", ".....", "....."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#....", ".###.", ".....", "....."]),
    ('d', ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####", ".....", "....."]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###.", ".....", "....."]),
    ('f', ["..##.", ".#...", "####.", ".#...", ".#...", ".#...", ".#...", ".....", "....."]),
    ('g', [".....", ".....", ".####", "#...#", "#...#", "#...#", ".####", "....#", ".###."]),
    ('h', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#", ".....", "....."]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###.", ".....", "....."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", ".....", "....."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###.", ".....", "....."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".....", "....."]),
    ('n', [".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#", ".....", "....."]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###.", ".....", "....."]),
    ('p', [".....", ".....", "####.", "#...#", "#...#", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".....", ".####", "#...#", "#...#", "#...#", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#....", ".....", "....."]),
    ('s', [".....", ".....", ".####", "#....", ".###.", "....#", "####.", ".....", "....."]),
    ('t', [".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##.", ".....", "....."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#", ".....", "....."]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#..", ".....", "....."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.", ".....", "....."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", ".....", "....."]),
    ('y', [".....", ".....", "#...#", "#...#", "#...#", "#...#", ".####", "....#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####", ".....", "....."]),
    ('.', ["..", "..", "..", "..", "..", "##", "##", "..", ".."]),
    (',', ["..", "..", "..", "..", "..", "##", "##", ".#", "#."]),
];

const ONLY_A: &[Design] = &[
    ('œ', [".....", ".....", ".#.#.", "#.#.#", "#.###", "#.#..", ".#.##", ".....", "....."]),
    ('ß', [".##..", "#..#.", "#..#.", "#.#..", "#..#.", "#...#", "#.##.", ".....", "....."]),
];

const ONLY_B: &[Design] = &[
    ('é', ["...#.", "..#..", ".###.", "#...#", "#####", "#....", ".###.", ".....", "....."]),
    ('ü', [".#.#.", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#", ".....", "....."]),
];

/// A glyph bitmap, `true` is ink. Row-major, `height x width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Glyph {
    pub fn blank(height: usize, width: usize) -> Self {
        Glyph {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    fn from_design(rows: &[&str; DESIGN_ROWS]) -> Glyph {
        let width = rows[0].len();
        let bits = rows
            .iter()
            .flat_map(|r| {
                debug_assert_eq!(r.len(), width);
                r.bytes().map(|b| b == b'#')
            })
            .collect();
        Glyph {
            height: DESIGN_ROWS,
            width,
            bits,
        }
    }

    /// Embolden by smearing every stroke one column to the right, then slant
    /// the upper half one column right.
    fn bold_oblique(&self) -> Glyph {
        let width = self.width + 2;
        let mut out = Glyph::blank(self.height, width);
        for y in 0..self.height {
            let shift = usize::from(y < self.height / 2);
            for x in 0..self.width {
                if self.get(y, x) {
                    out.bits[y * width + x + shift] = true;
                    out.bits[y * width + x + shift + 1] = true;
                }
            }
        }
        out
    }

    /// Scale to `height` rows (nearest row) and repeat every column
    /// `x_scale` times.
    fn scaled(&self, height: usize, x_scale: usize) -> Glyph {
        let width = self.width * x_scale;
        let mut out = Glyph::blank(height, width);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                out.bits[y * width + x] = self.get(sy, x / x_scale);
            }
        }
        out
    }
}

/// Which built-in typeface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum FontId {
    A,
    B,
}

impl std::str::FromStr for FontId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(FontId::A),
            "B" | "b" => Ok(FontId::B),
            other => Err(format!("unknown font {other:?}, expected A or B")),
        }
    }
}

impl std::fmt::Display for FontId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FontId::A => "A",
            FontId::B => "B",
        })
    }
}

/// A fixed-height bitmap font.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFont {
    pub name: String,
    pub height: usize,
    /// Blank columns between neighbouring glyphs.
    pub spacing: usize,
    pub glyphs: BTreeMap<char, Glyph>,
}

impl SynthFont {
    /// A font from explicit glyphs. All glyphs must share `height`.
    pub fn new(name: &str, glyphs: BTreeMap<char, Glyph>, spacing: usize) -> Result<Self, String> {
        let height = glyphs
            .values()
            .next()
            .map(|g| g.height)
            .ok_or("font has no glyphs")?;
        if let Some((c, _)) = glyphs.iter().find(|(_, g)| g.height != height || g.width == 0) {
            return Err(format!("glyph {c:?} has a different height or zero width"));
        }
        Ok(SynthFont {
            name: name.to_string(),
            height,
            spacing,
            glyphs,
        })
    }

    /// One of the two built-in faces rendered at `height` pixels.
    pub fn builtin(id: FontId, height: usize) -> SynthFont {
        let height = height.max(DESIGN_ROWS);
        let x_scale = (height / 24).max(1);
        let exclusive = match id {
            FontId::A => ONLY_A,
            FontId::B => ONLY_B,
        };
        let mut glyphs = BTreeMap::new();
        for (ch, rows) in SHARED.iter().chain(exclusive) {
            let design = Glyph::from_design(rows);
            let design = match id {
                FontId::A => design,
                FontId::B => design.bold_oblique(),
            };
            glyphs.insert(*ch, design.scaled(height, x_scale));
        }
        let space_width = match id {
            FontId::A => 3,
            FontId::B => 4,
        } * x_scale;
        glyphs.insert(' ', Glyph::blank(height, space_width));
        SynthFont {
            name: id.to_string(),
            height,
            spacing: x_scale,
            glyphs,
        }
    }

    pub fn supports(&self, ch: char) -> bool {
        self.glyphs.contains_key(&ch)
    }

    pub fn alphabet(&self) -> std::collections::BTreeSet<char> {
        self.glyphs.keys().copied().collect()
    }

    /// Letters suitable for sampled words: everything except space and
    /// punctuation.
    pub fn letters(&self) -> Vec<char> {
        self.glyphs
            .keys()
            .copied()
            .filter(|c| c.is_alphabetic())
            .collect()
    }
}
