//! Fixed quadrature rules on the reference triangle and segment.

/// Reference-triangle points with weights summing to the reference area 1/2.
/// Exact for quadratics.
pub const TRIANGLE_ORDER2: [([f64; 2], f64); 3] = [
    ([1.0 / 6.0, 1.0 / 6.0], 1.0 / 6.0),
    ([2.0 / 3.0, 1.0 / 6.0], 1.0 / 6.0),
    ([1.0 / 6.0, 2.0 / 3.0], 1.0 / 6.0),
];

/// Seven-point rule, exact for quintics.
pub const TRIANGLE_ORDER5: [([f64; 2], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_34;
    const W0: f64 = 0.225 / 2.0;
    const W1: f64 = 0.132_394_152_788_506_18 / 2.0;
    const W2: f64 = 0.125_939_180_544_827_15 / 2.0;
    [
        ([1.0 / 3.0, 1.0 / 3.0], W0),
        ([A1, B1], W1),
        ([B1, A1], W1),
        ([B1, B1], W1),
        ([A2, B2], W2),
        ([B2, A2], W2),
        ([B2, B2], W2),
    ]
};

/// Gauss-Legendre on `[0, 1]`, weights summing to 1. Exact for quintics.
pub const SEGMENT_GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Quadrature rule selector for functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rule {
    #[default]
    Order2,
    Order5,
}

impl Rule {
    pub fn triangle(self) -> &'static [([f64; 2], f64)] {
        match self {
            Rule::Order2 => &TRIANGLE_ORDER2,
            Rule::Order5 => &TRIANGLE_ORDER5,
        }
    }

    pub fn segment(self) -> &'static [(f64, f64)] {
        &SEGMENT_GAUSS3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(rule: &[([f64; 2], f64)], f: impl Fn(f64, f64) -> f64) -> f64 {
        rule.iter().map(|(p, w)| w * f(p[0], p[1])).sum()
    }

    #[test]
    fn triangle_rules_are_exact() {
        // ∫ x^a y^b over the reference triangle = a! b! / (a+b+2)!
        let fact = |n: u32| (1..=n).product::<u32>().max(1) as f64;
        for (rule, deg) in [(&TRIANGLE_ORDER2[..], 2), (&TRIANGLE_ORDER5[..], 5)] {
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let exact = fact(a) * fact(b) / fact(a + b + 2);
                    let got = integrate(rule, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!((got - exact).abs() < 1e-14, "{a} {b} {got} {exact}");
                }
            }
        }
    }

    #[test]
    fn segment_rule_exact_to_degree_five() {
        for k in 0..=5 {
            let got: f64 = SEGMENT_GAUSS3.iter().map(|(s, w)| w * s.powi(k)).sum();
            assert!((got - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }
}
