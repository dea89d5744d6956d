use std::sync::OnceLock;

/// Quadrature rule on a triangle in barycentric coordinates. Weights are
/// normalized to sum to one, so an element integral is `|K| * sum(w_q f(x_q))`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub id: &'static str,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Maximum error over all monomials `x^a y^b` with `a + b <= degree`
    /// on the reference triangle.
    pub fn exactness_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..=self.degree {
            for b in 0..=(self.degree - a) {
                // on the reference triangle x = l1, y = l2
                let approx: f64 = self
                    .points
                    .iter()
                    .zip(&self.weights)
                    .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                    .sum::<f64>()
                    * 0.5;
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                worst = worst.max((approx - exact).abs());
            }
        }
        worst
    }

    fn verified(self) -> Self {
        let wsum: f64 = self.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-13, "{} weights sum to {wsum}", self.id);
        let err = self.exactness_error();
        assert!(err < 1e-13, "{} fails degree-{} exactness by {err:e}", self.id, self.degree);
        self
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Edge-midpoint rule, exact for quadratics.
pub fn degree2() -> &'static Quadrature {
    static RULE: OnceLock<Quadrature> = OnceLock::new();
    RULE.get_or_init(|| {
        Quadrature {
            id: "edge-midpoint-3",
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
        .verified()
    })
}

/// Dunavant's 12-point rule, exact for polynomials of degree 6.
pub fn degree6() -> &'static Quadrature {
    static RULE: OnceLock<Quadrature> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        let mut orbit3 = |a: f64, b: f64, w: f64| {
            for p in [[a, b, b], [b, a, b], [b, b, a]] {
                points.push(p);
                weights.push(w);
            }
        };
        orbit3(0.501426509658179, 0.249286745170910, 0.116786275726379);
        orbit3(0.873821971016996, 0.063089014491502, 0.050844906370207);
        let (a, b, c) = (0.053145049844817, 0.310352451033784, 0.636502499121399);
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push(p);
            weights.push(0.082851075618374);
        }
        Quadrature { id: "dunavant-12", points, weights, degree: 6 }.verified()
    })
}
