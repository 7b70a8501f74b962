//! Piecewise cubic Hermite tables.

/// Cubic Hermite interpolant on `[x0, x1]` from endpoint values and slopes.
#[inline]
pub(crate) fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

/// Tabulated function with exact node derivatives.
#[derive(Clone, Debug)]
pub struct HermiteTable {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl HermiteTable {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        debug_assert_eq!(nodes.len(), values.len());
        debug_assert_eq!(nodes.len(), slopes.len());
        Self { nodes, values, slopes }
    }

    /// Index `i` with `nodes[i] <= x <= nodes[i + 1]`, clamped to the table.
    #[inline]
    pub fn segment(&self, x: f64) -> usize {
        let n = self.nodes.len();
        match self.nodes.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.clamp(1, n - 1) - 1,
        }
    }

    #[inline]
    pub fn eval_in(&self, i: usize, x: f64) -> f64 {
        hermite(
            self.nodes[i],
            self.nodes[i + 1],
            self.values[i],
            self.values[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
            x,
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.segment(x), x)
    }
}
