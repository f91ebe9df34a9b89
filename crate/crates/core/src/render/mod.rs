//! Static SVG figures: embedding scatters, per-pattern time series,
//! conditional spacing bars and the spacing-count histogram.
//!
//! Every figure carries its data on the elements (`data-*` attributes) so
//! marker counts, curve values and bar heights can be read back.

mod figures;
mod svg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{Pattern, PatternLabelSet};

pub use figures::{
    render_pattern_timeseries, render_scatter, render_spacing_bars, render_spacing_histogram,
    ScatterOptions,
};
pub use svg::escape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const BLACK: Rgb = Rgb(0, 0, 0);

    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }

    pub fn parse_hex(s: &str) -> Result<Rgb> {
        let h = s.strip_prefix('#').unwrap_or(s);
        let bad = || Error::Invalid(format!("bad color {s:?}"));
        if h.len() != 6 {
            return Err(bad());
        }
        let c = |i: usize| u8::from_str_radix(&h[i..i + 2], 16).map_err(|_| bad());
        Ok(Rgb(c(0)?, c(2)?, c(4)?))
    }
}

/// Default priority when a sample carries several patterns.
pub const DEFAULT_PRIORITY: [Pattern; 8] = [
    Pattern::Induction,
    Pattern::Spacing,
    Pattern::Delimiter,
    Pattern::Formatting,
    Pattern::Numeric,
    Pattern::WordStart,
    Pattern::WordEnd,
    Pattern::WordPart,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorScheme {
    pub colors: Vec<(Pattern, Rgb)>,
    /// Earlier patterns win.
    pub priority: Vec<Pattern>,
    pub unpatterned: Rgb,
}

impl Default for ColorScheme {
    fn default() -> Self {
        Self {
            colors: vec![
                (Pattern::WordStart, Rgb(0x1f, 0x77, 0xb4)),
                (Pattern::WordPart, Rgb(0x9e, 0xc9, 0xe8)),
                (Pattern::WordEnd, Rgb(0x6a, 0x3d, 0x9a)),
                (Pattern::Induction, Rgb(0xd6, 0x27, 0x28)),
                (Pattern::Spacing, Rgb(0x2c, 0xa0, 0x2c)),
                (Pattern::Delimiter, Rgb(0xff, 0x7f, 0x0e)),
                (Pattern::Formatting, Rgb(0xe3, 0x77, 0xc2)),
                (Pattern::Numeric, Rgb(0x8c, 0x56, 0x4b)),
            ],
            priority: DEFAULT_PRIORITY.to_vec(),
            unpatterned: Rgb(0xb0, 0xb0, 0xb0),
        }
    }
}

impl ColorScheme {
    pub fn validate(&self) -> Result<()> {
        for p in Pattern::ALL {
            if self.colors.iter().filter(|c| c.0 == p).count() != 1 {
                return Err(Error::Config(format!(
                    "color scheme needs exactly one color for {p}"
                )));
            }
            if !self.priority.contains(&p) {
                return Err(Error::Config(format!("priority list is missing {p}")));
            }
        }
        let mut all: Vec<Rgb> = self.colors.iter().map(|c| c.1).collect();
        all.push(self.unpatterned);
        for (i, a) in all.iter().enumerate() {
            if all[i + 1..].contains(a) {
                return Err(Error::Config(format!("color {} is used twice", a.hex())));
            }
        }
        Ok(())
    }

    pub fn color(&self, p: Pattern) -> Rgb {
        self.colors
            .iter()
            .find(|c| c.0 == p)
            .map_or(self.unpatterned, |c| c.1)
    }

    /// Highest-priority pattern the sample carries.
    pub fn resolve(&self, labels: &PatternLabelSet) -> Option<Pattern> {
        self.priority.iter().copied().find(|&p| labels.has(p))
    }

    pub fn color_for(&self, labels: &PatternLabelSet) -> Rgb {
        self.resolve(labels)
            .map_or(self.unpatterned, |p| self.color(p))
    }
}

/// Count at and above which spacing markers are black.
pub const SPACING_BLACK_AT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingColor {
    /// `log10(1 + s) / log10(51)`.
    pub a: f64,
    /// `1 - 0.8 a`, in `[0.2, 1]` for `s <= 50`.
    pub green: f64,
    pub black: bool,
}

impl SpacingColor {
    pub fn rgb(self) -> Rgb {
        if self.black {
            Rgb::BLACK
        } else {
            Rgb(0, (255.0 * self.green).round() as u8, 0)
        }
    }
}

pub fn spacing_color(s: usize) -> SpacingColor {
    let a = (1.0 + s as f64).log10() / (1.0 + SPACING_BLACK_AT as f64).log10();
    SpacingColor {
        a,
        green: 1.0 - 0.8 * a.min(1.0),
        black: s >= SPACING_BLACK_AT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_color_endpoints() {
        assert_eq!(spacing_color(0).green, 1.0);
        let c = spacing_color(50);
        assert!((c.a - 1.0).abs() < 1e-15 && (c.green - 0.2).abs() < 1e-15 && c.black);
        assert_eq!(c.rgb(), Rgb::BLACK);
        assert!((spacing_color(9).green - 0.531497).abs() < 1e-5);
    }

    #[test]
    fn default_scheme_is_valid_and_prefers_induction() {
        let s = ColorScheme::default();
        s.validate().unwrap();
        let mut l = PatternLabelSet::default();
        l.word_end = true;
        l.induction = true;
        assert_eq!(s.resolve(&l), Some(Pattern::Induction));
        assert_eq!(s.color_for(&PatternLabelSet::default()), s.unpatterned);
    }

    #[test]
    fn hex_round_trip() {
        let c = Rgb(1, 200, 255);
        assert_eq!(Rgb::parse_hex(&c.hex()).unwrap(), c);
    }
}
