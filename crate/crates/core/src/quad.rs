//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            abs_tol: 0.0,
            rel_tol: 1e-10,
            max_panels: 20_000,
        }
    }
}

/// Integral value with an error estimate (|K15 - G7| summed over panels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    Panel {
        a,
        b,
        value: k * half,
        error: ((k - g) * half).abs(),
    }
}

/// Integrate `f` over consecutive panels given by `breaks` (sorted),
/// bisecting the worst panel until the summed error estimate meets the spec.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], spec: &QuadSpec) -> Result<Estimate> {
    if breaks.len() < 2 {
        return Err(Error::invalid("quadrature needs at least one interval"));
    }
    let mut panels: Vec<Panel> = breaks
        .windows(2)
        .map(|w| kronrod(&f, w[0], w[1]))
        .collect();
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let target = spec.abs_tol.max(spec.rel_tol * value.abs());
        if error <= target {
            return Ok(Estimate {
                value,
                error,
                panels: panels.len(),
            });
        }
        if panels.len() >= spec.max_panels {
            return Err(Error::Accuracy {
                estimate: error,
                requested: target,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return Err(Error::Accuracy {
                estimate: error,
                requested: target,
            });
        }
        panels.push(kronrod(&f, p.a, mid));
        panels.push(kronrod(&f, mid, p.b));
    }
}

/// Composite Gauss–Kronrod rule on fixed panels, for integrating many
/// integrands that share nodes (e.g. an expensive common factor).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRule {
    pub nodes: Vec<f64>,
    /// Kronrod weights scaled by the panel half-width.
    pub kronrod: Vec<f64>,
    /// Embedded Gauss weights (zero on Kronrod-only nodes).
    pub gauss: Vec<f64>,
}

impl FixedRule {
    pub fn new(breaks: &[f64]) -> Result<Self> {
        if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("fixed rule needs increasing breaks"));
        }
        let n = 15 * (breaks.len() - 1);
        let mut rule = Self {
            nodes: Vec::with_capacity(n),
            kronrod: Vec::with_capacity(n),
            gauss: Vec::with_capacity(n),
        };
        for w in breaks.windows(2) {
            let center = 0.5 * (w[0] + w[1]);
            let half = 0.5 * (w[1] - w[0]);
            for j in 0..8 {
                let g = match j {
                    1 | 3 | 5 => WG[j / 2],
                    7 => WG[3],
                    _ => 0.0,
                };
                let signs: &[f64] = if j == 7 { &[1.0] } else { &[-1.0, 1.0] };
                for &sg in signs {
                    rule.nodes.push(center + sg * half * XGK[j]);
                    rule.kronrod.push(WGK[j] * half);
                    rule.gauss.push(g * half);
                }
            }
        }
        Ok(rule)
    }

    /// Uniform panels of width at most `max_width` on [a, b].
    pub fn uniform(a: f64, b: f64, max_width: f64) -> Result<Self> {
        let n = ((b - a) / max_width).ceil().max(1.0) as usize;
        let breaks: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
        Self::new(&breaks)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral from integrand values at `nodes`. The error is the
    /// per-panel |K15 − G7| summed, as in [`integrate`].
    pub fn apply(&self, values: &[f64]) -> Estimate {
        debug_assert_eq!(values.len(), self.nodes.len());
        let mut value = 0.0;
        let mut error = 0.0;
        for (panel, chunk) in values.chunks(15).enumerate() {
            let o = panel * 15;
            let mut k = 0.0;
            let mut g = 0.0;
            for (j, &v) in chunk.iter().enumerate() {
                k += self.kronrod[o + j] * v;
                g += self.gauss[o + j] * v;
            }
            value += k;
            error += (k - g).abs();
        }
        Estimate {
            value,
            error,
            panels: self.nodes.len() / 15,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let est = integrate(|x| x.powi(5) - 3.0 * x * x, &[0.0, 2.0], &QuadSpec::default()).unwrap();
        assert!((est.value - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_integrand() {
        // ∫_0^π sin(20x) e^{-x} dx
        let spec = QuadSpec {
            rel_tol: 1e-12,
            ..QuadSpec::default()
        };
        let est = integrate(|x| (20.0 * x).sin() * (-x).exp(), &[0.0, std::f64::consts::PI], &spec).unwrap();
        let exact = 20.0 * (1.0 - (-std::f64::consts::PI).exp()) / 401.0;
        assert!((est.value - exact).abs() < 1e-12);
        assert!((est.value - exact).abs() <= est.error.max(1e-15));
    }

    #[test]
    fn panel_budget_exhaustion_is_an_accuracy_error() {
        let spec = QuadSpec {
            abs_tol: 0.0,
            rel_tol: 1e-15,
            max_panels: 2,
        };
        let r = integrate(|x| (1.0 / x).sin(), &[1e-3, 1.0], &spec);
        assert!(matches!(r, Err(Error::Accuracy { .. })));
    }

    #[test]
    fn fixed_rule_matches_adaptive() {
        let f = |x: f64| (3.0 * x).sin() * (-x).exp();
        let rule = FixedRule::uniform(0.0, 10.0, 0.5).unwrap();
        let vals: Vec<f64> = rule.nodes.iter().map(|&x| f(x)).collect();
        let fixed = rule.apply(&vals);
        let exact = (3.0 - (-10.0f64).exp() * (3.0 * (30.0f64).cos() + (30.0f64).sin())) / 10.0;
        assert!((fixed.value - exact).abs() < 1e-12, "{} {}", fixed.value, exact);
        assert!(fixed.error < 1e-6);
        assert_eq!(fixed.panels, 20);
    }
}
