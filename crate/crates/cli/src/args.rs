use std::fmt;
use std::str::FromStr;

use vitalcam_core::frame::Roi;

/// A parsed flag value that remembers the text it came from, so traces can
/// echo flags exactly as given.
#[derive(Debug, Clone)]
pub struct Raw<T> {
    pub value: T,
    pub text: String,
}

impl<T: FromStr> FromStr for Raw<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let value = s.parse::<T>().map_err(|e| e.to_string())?;
        Ok(Self {
            value,
            text: s.to_owned(),
        })
    }
}

/// `LO:HI` in hertz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s.split_once(':').ok_or("expected LO:HI in hertz")?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Self {
            lo: parse(lo)?,
            hi: parse(hi)?,
        })
    }
}

/// `WIDTHxHEIGHT`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Self {
            width: parse(w)?,
            height: parse(h)?,
        })
    }
}

/// `X,Y,W,H` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect(pub Roi);

impl FromStr for Rect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, w, h] = parts[..] else {
            return Err("expected X,Y,W,H".into());
        };
        let int = |v: &str| v.parse::<i64>().map_err(|e| format!("`{v}`: {e}"));
        let dim = |v: &str| v.parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
        Roi::new(int(x)?, int(y)?, dim(w)?, dim(h)?)
            .map(Rect)
            .map_err(|e| e.to_string())
    }
}
