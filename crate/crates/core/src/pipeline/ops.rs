use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvCache, Module};
use crate::scalar::Scalar;
use crate::tensor::{Representation, Tensor3};

pub const PROJECTION_KERNEL: usize = 3;

/// Shape-preserving 3×3 convolution applied to the student features before
/// they are compared with the teacher's.
#[derive(Debug, Clone)]
pub struct Projection<T> {
    conv: Conv2d<T>,
}

impl<T: Scalar> Projection<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            conv: Conv2d::identity(channels, PROJECTION_KERNEL),
        }
    }

    pub fn random<R: Rng>(channels: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::he_init(channels, channels, PROJECTION_KERNEL, 1, PROJECTION_KERNEL / 2, rng),
        }
    }

    pub fn zeroed(channels: usize) -> Self {
        Self {
            conv: Conv2d::zeros(channels, channels, PROJECTION_KERNEL, 1, PROJECTION_KERNEL / 2),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn conv(&self) -> &Conv2d<T> {
        &self.conv
    }

    pub fn conv_mut(&mut self) -> &mut Conv2d<T> {
        &mut self.conv
    }

    fn check(&self, h: &Representation<T>) -> Result<()> {
        if h.values.channels() != self.channels() {
            return Err(Error::Config(format!(
                "projection configured for {} channels, representation has {}",
                self.channels(),
                h.values.channels()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, h: &Representation<T>) -> Result<(Representation<T>, ConvCache<T>)> {
        self.check(h)?;
        let (out, cache) = self.conv.forward_cached(&h.values)?;
        Ok((Representation::new(out, h.stride), cache))
    }

    pub(crate) fn backward(&mut self, grad: &Tensor3<T>, cache: &ConvCache<T>) -> Tensor3<T> {
        self.conv.backward(grad, cache, true).expect("input grad requested")
    }
}

impl<T: Scalar> Module<T> for Projection<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&[T])) {
        self.conv.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        self.conv.visit_params_mut(f);
    }
}

pub fn project_linear<T: Scalar>(proj: &Projection<T>, h: &Representation<T>) -> Result<Representation<T>> {
    proj.check(h)?;
    Ok(Representation::new(proj.conv.forward(&h.values)?, h.stride))
}

fn check_same_shape<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "cosine similarity needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Channel-vector cosine at every spatial location, averaged over
/// locations. The denominator is clamped below at `epsilon`.
pub fn cosine_similarity<T: Scalar>(h_i: &Tensor3<T>, h_j: &Tensor3<T>, epsilon: f64) -> Result<f64> {
    check_same_shape(h_i, h_j)?;
    let (c, h, w) = h_i.shape();
    let n = h * w;
    let (a, b) = (h_i.data(), h_j.data());
    let mut total = 0.0;
    for l in 0..n {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let (x, y) = (a[k * n + l].as_f64(), b[k * n + l].as_f64());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        total += dot / (na.sqrt() * nb.sqrt()).max(epsilon);
    }
    Ok(total / n as f64)
}

/// Value and gradient with respect to `h_i` of [`cosine_similarity`].
pub fn cosine_similarity_grad<T: Scalar>(
    h_i: &Tensor3<T>,
    h_j: &Tensor3<T>,
    epsilon: f64,
) -> Result<(f64, Tensor3<T>)> {
    check_same_shape(h_i, h_j)?;
    let (c, h, w) = h_i.shape();
    let n = h * w;
    let (a, b) = (h_i.data(), h_j.data());
    let mut grad = Tensor3::zeros(c, h, w);
    let g = grad.data_mut();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for l in 0..n {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let (x, y) = (a[k * n + l].as_f64(), b[k * n + l].as_f64());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let (la, lb) = (na.sqrt(), nb.sqrt());
        let denom = la * lb;
        if denom > epsilon {
            let cos = dot / denom;
            total += cos;
            for k in 0..c {
                let (x, y) = (a[k * n + l].as_f64(), b[k * n + l].as_f64());
                g[k * n + l] = T::lit(inv_n * (y / denom - cos * x / na));
            }
        } else {
            total += dot / epsilon;
            for k in 0..c {
                g[k * n + l] = T::lit(inv_n * b[k * n + l].as_f64() / epsilon);
            }
        }
    }
    Ok((total * inv_n, grad))
}

/// Channel concatenation, `h_a` channels first.
pub fn fuse<T: Scalar>(h_a: &Representation<T>, h_b: &Representation<T>) -> Result<Representation<T>> {
    let (ca, ha, wa) = h_a.shape();
    let (cb, hb, wb) = h_b.shape();
    if (ha, wa) != (hb, wb) || h_a.stride != h_b.stride {
        return Err(Error::Input(format!(
            "cannot fuse {ha}x{wa} (stride {}) with {hb}x{wb} (stride {})",
            h_a.stride, h_b.stride
        )));
    }
    let mut data = Vec::with_capacity((ca + cb) * ha * wa);
    data.extend_from_slice(h_a.values.data());
    data.extend_from_slice(h_b.values.data());
    Ok(Representation::new(
        Tensor3::from_vec(ca + cb, ha, wa, data)?,
        h_a.stride,
    ))
}

/// Splits a gradient on a fused map back into its two parts.
pub fn split_fused_grad<T: Scalar>(grad: Tensor3<T>, channels_a: usize) -> (Tensor3<T>, Tensor3<T>) {
    let (c, h, w) = grad.shape();
    let mut data = grad.into_vec();
    let rest = data.split_off(channels_a * h * w);
    (
        Tensor3::from_vec(channels_a, h, w, data).expect("split shape"),
        Tensor3::from_vec(c - channels_a, h, w, rest).expect("split shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(c, h, w, |_, _, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn hand_computed_single_location() {
        let a = Tensor3::from_vec(2, 1, 1, vec![3.0, 4.0]).unwrap();
        let b = Tensor3::from_vec(2, 1, 1, vec![4.0, 3.0]).unwrap();
        assert!((cosine_similarity(&a, &b, 1e-8).unwrap() - 0.96).abs() < 1e-15);
    }

    #[test]
    fn self_and_antipodal() {
        let h = random_map(8, 4, 4, 1);
        assert!((cosine_similarity(&h, &h, 1e-8).unwrap() - 1.0).abs() < 1e-12);
        let neg = h.map(|v| -v);
        assert!((cosine_similarity(&h, &neg, 1e-8).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_are_guarded() {
        let z = Tensor3::<f64>::zeros(3, 2, 2);
        assert_eq!(cosine_similarity(&z, &z, 1e-8).unwrap(), 0.0);
        let (v, g) = cosine_similarity_grad(&z, &random_map(3, 2, 2, 2), 1e-8).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.is_finite());
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let a = Tensor3::<f64>::zeros(3, 2, 2);
        let b = Tensor3::<f64>::zeros(3, 2, 1);
        assert!(matches!(cosine_similarity(&a, &b, 1e-8), Err(Error::Input(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_map(5, 3, 3, 3);
        let b = random_map(5, 3, 3, 4);
        let (_, g) = cosine_similarity_grad(&a, &b, 1e-8).unwrap();
        let h = 1e-6;
        for idx in [0, 7, 19, 33, 44] {
            let mut p = a.clone();
            p.data_mut()[idx] += h;
            let mut m = a.clone();
            m.data_mut()[idx] -= h;
            let fd = (cosine_similarity(&p, &b, 1e-8).unwrap() - cosine_similarity(&m, &b, 1e-8).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[idx]).abs() < 1e-7, "{fd} vs {}", g.data()[idx]);
        }
    }

    #[test]
    fn projection_shapes_and_identity() {
        let h = Representation::new(random_map(64, 16, 16, 5), 8);
        let id = Projection::<f64>::identity(64);
        let out = project_linear(&id, &h).unwrap();
        assert_eq!(out.shape(), (64, 16, 16));
        assert_eq!(out.values, h.values);
        let wrong = Projection::<f64>::identity(32);
        assert!(matches!(project_linear(&wrong, &h), Err(Error::Config(_))));
    }

    #[test]
    fn projection_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let proj = Projection::<f64>::random(4, &mut rng);
        let x = random_map(4, 6, 6, 7);
        let out = project_linear(&proj, &Representation::new(x.clone(), 1)).unwrap();
        let conv = proj.conv();
        for (o, y, xx) in [(0, 0, 0), (1, 2, 3), (2, 5, 5), (3, 0, 5), (0, 3, 1)] {
            let mut acc = conv.bias[o];
            for c in 0..4 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if (0..6).contains(&iy) && (0..6).contains(&ix) {
                            acc += conv.weight[((o * 4 + c) * 3 + ky) * 3 + kx] * x.get(c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            assert!((acc - out.values.get(o, y, xx)).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_orders_channels() {
        let a = Representation::new(random_map(64, 16, 16, 8), 8);
        let b = Representation::new(random_map(64, 16, 16, 9), 8);
        let f = fuse(&a, &b).unwrap();
        assert_eq!(f.shape(), (128, 16, 16));
        let z = fuse(&a, &a.zeros_like()).unwrap();
        assert_eq!(&z.values.data()[..64 * 256], a.values.data());
        assert!(z.values.data()[64 * 256..].iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let (k, y, x) = (
                rng.random_range(0..128),
                rng.random_range(0..16),
                rng.random_range(0..16),
            );
            let want = if k < 64 {
                a.values.get(k, y, x)
            } else {
                b.values.get(k - 64, y, x)
            };
            assert_eq!(f.values.get(k, y, x), want);
        }
        let (ga, gb) = split_fused_grad(f.values.clone(), 64);
        assert_eq!(ga, a.values);
        assert_eq!(gb, b.values);
        let small = Representation::new(random_map(64, 8, 8, 11), 16);
        assert!(matches!(fuse(&a, &small), Err(Error::Input(_))));
    }

    proptest! {
        #[test]
        fn positive_scale_invariance(seed in 0u64..1000, scale in 0.01..100.0f64) {
            let a = random_map(6, 3, 3, seed);
            let b = random_map(6, 3, 3, seed + 1);
            let base = cosine_similarity(&a, &b, 1e-8).unwrap();
            let scaled = cosine_similarity(&a.map(|v| v * scale), &b, 1e-8).unwrap();
            prop_assert!((base - scaled).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
