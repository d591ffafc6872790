//! Pareto interpolation of (WCE, area) and the attractiveness weight.

/// Non-dominated (wce, area) knots: wce strictly increasing, area strictly
/// decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoCurve {
    knots: Vec<(f64, f64)>,
}

impl ParetoCurve {
    /// Builds the front of `points`, dropping dominated ones. `None` when
    /// no points are given.
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut knots: Vec<(f64, f64)> = Vec::new();
        for p in pts {
            if knots.last().is_none_or(|last| p.1 < last.1) {
                knots.push(p);
            }
        }
        (!knots.is_empty()).then_some(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Area of a hypothetical front circuit at error `wce`: linear between
    /// knots, flat beyond the ends.
    pub fn cost(&self, wce: f64) -> f64 {
        let k = &self.knots;
        if wce <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if wce >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|p| p.0 <= wce);
        let (w1, a1) = k[i - 1];
        let (w2, a2) = k[i];
        a1 + (a2 - a1) * (wce - w1) / (w2 - w1)
    }
}

pub fn pareto_cost(curve: &ParetoCurve, wce: f64) -> f64 {
    curve.cost(wce)
}

pub const ATTRACTIVENESS_DECAY: f64 = 0.01;

/// `exp(-d · (area - pareto_cost(wce)))`, areas in µm².
pub fn attractiveness(area: f64, wce: f64, curve: &ParetoCurve, d: f64) -> f64 {
    (-d * (area - curve.cost(wce))).exp()
}
