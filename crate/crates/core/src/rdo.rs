//! Rate-distortion bookkeeping: Pareto fronts over a checkpoint family and
//! per-budget model selection.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measured operating point of a model (or an external codec).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub model_id: u32,
    pub bpp: f64,
    pub quality: f64,
}

impl RatePoint {
    pub fn new(model_id: u32, bpp: f64, quality: f64) -> Result<Self> {
        let p = Self { model_id, bpp, quality };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bpp >= 0.0) || !self.bpp.is_finite() {
            return Err(Error::RdCurve(format!("model {}: bpp {} is not a finite non-negative value", self.model_id, self.bpp)));
        }
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(Error::RdCurve(format!("model {}: quality {} outside [0, 1]", self.model_id, self.quality)));
        }
        Ok(())
    }

    /// `self` is at least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &RatePoint) -> bool {
        self.bpp <= other.bpp && self.quality >= other.quality && (self.bpp < other.bpp || self.quality > other.quality)
    }
}

/// Non-dominated subset, sorted by bpp with strictly increasing quality.
/// Of several identical operating points the lowest model id survives.
pub fn pareto_front(points: &[RatePoint]) -> Result<Vec<RatePoint>> {
    if points.is_empty() {
        return Err(Error::Empty("no rate points"));
    }
    for p in points {
        p.validate()?;
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.bpp
            .total_cmp(&b.bpp)
            .then(b.quality.total_cmp(&a.quality))
            .then(a.model_id.cmp(&b.model_id))
    });
    let mut front: Vec<RatePoint> = Vec::new();
    for p in sorted {
        if front.last().is_none_or(|best| p.quality > best.quality) {
            front.push(p);
        }
    }
    Ok(front)
}

/// Outcome of [`select_model`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub point: RatePoint,
    /// False when no point met the budget and the cheapest was chosen.
    pub within_budget: bool,
}

/// Highest-quality point with `bpp ≤ target_bpp`, else the cheapest point.
pub fn select_model(front: &[RatePoint], target_bpp: f64) -> Result<Selection> {
    let cheapest = front
        .iter()
        .min_by(|a, b| a.bpp.total_cmp(&b.bpp).then(b.quality.total_cmp(&a.quality)))
        .ok_or(Error::Empty("empty Pareto front"))?;
    let best = front
        .iter()
        .filter(|p| p.bpp <= target_bpp)
        .max_by(|a, b| a.quality.total_cmp(&b.quality).then(b.bpp.total_cmp(&a.bpp)));
    Ok(match best {
        Some(p) => Selection {
            point: *p,
            within_budget: true,
        },
        None => {
            warn!(
                "no model reaches {target_bpp} bpp; using model {} at {:.4} bpp",
                cheapest.model_id, cheapest.bpp
            );
            Selection {
                point: *cheapest,
                within_budget: false,
            }
        }
    })
}

pub fn write_rate_points<W: Write>(writer: W, points: &[RatePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rate_points<R: Read>(reader: R) -> Result<Vec<RatePoint>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let points = r.deserialize().collect::<std::result::Result<Vec<RatePoint>, _>>()?;
    for p in &points {
        p.validate()?;
    }
    Ok(points)
}

pub fn save_rate_points(path: impl AsRef<Path>, points: &[RatePoint]) -> Result<()> {
    write_rate_points(std::fs::File::create(path)?, points)
}

pub fn load_rate_points(path: impl AsRef<Path>) -> Result<Vec<RatePoint>> {
    read_rate_points(std::fs::File::open(path)?)
}
