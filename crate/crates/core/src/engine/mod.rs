//! Minimal reverse-mode autodiff over dense `f64` arrays, plus finite-difference
//! verification and the SGD optimizer.

mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use kernels::{ConvGeometry, PadMode};
pub use optim::{sgd_step, OptimConfig};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
        let r = m(1, 2, &[1., 2.]).matmul(&m(2, 1, &[3., 4.])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let z = Tensor::zeros(&[2, 3])
            .matmul(&Tensor::from_fn(&[3, 4], |i| i as f64))
            .unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3])
            .matmul(&Tensor::zeros(&[2, 3]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn conv_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let k = t.constant(Tensor::new(&[1, 1, 1, 1], vec![2.]).unwrap());
        let y = t.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(t.value(y).data(), &[2., 4., 6., 8.]);

        let x = t.constant(Tensor::ones(&[1, 3, 3]));
        let k = t.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = t.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 3, 3]);
        assert_eq!(t.value(y).data()[4], 9.0);
        assert_eq!(t.value(y).data()[0], 4.0);

        let k0 = t.constant(Tensor::zeros(&[2, 1, 3, 3]));
        let y = t.conv2d(x, k0, 1, 1).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_non_integral_extent() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[1, 4, 4]));
        let k = t.constant(Tensor::ones(&[1, 1, 3, 3]));
        assert!(matches!(t.conv2d(x, k, 2, 0), Err(Error::Config(_))));
        assert!(t.conv2d(x, k, 2, 1).is_err() || t.conv2d(x, k, 1, 1).is_ok());
        let even = t.constant(Tensor::ones(&[1, 1, 2, 2]));
        assert!(t.conv2d(x, even, 1, 0).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(
            3,
            4,
            &[0., 0., 0., 0., 3f64.ln(), 0., 0., 0., 1000., 0., 0., 0.],
        ));
        let x = t.reshape(x, &[3, 4]).unwrap();
        let y = t.softmax_rows(x).unwrap();
        let v = t.value(y).clone();
        assert!(v.row(0).iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let r1 = v.row(1);
        assert!((r1[0] - 0.5).abs() < 1e-12, "{r1:?}");
        let x2 = t.constant(m(1, 2, &[3f64.ln(), 0.]));
        let y2 = t.softmax_rows(x2).unwrap();
        assert!((t.value(y2).data()[0] - 0.75).abs() < 1e-15);
        assert!((t.value(y2).data()[1] - 0.25).abs() < 1e-15);
        assert_eq!(v.row(2)[0], 1.0);
        assert!(v.row(2)[1] >= 0.0 && v.row(2)[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut t = Tape::new();
        let x = t.constant(m(1, 2, &[f64::NAN, 0.]));
        assert!(matches!(t.softmax_rows(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1., 2.]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0., 2.]);
        let z = t.constant(Tensor::scalar(0.));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).item(), 0.5);
        let one = t.constant(Tensor::scalar(1.));
        let l = t.log(one);
        assert_eq!(t.value(l).item(), 0.0);
        let a = t.constant(Tensor::vector(vec![1., 2.]));
        let b = t.constant(Tensor::vector(vec![3., 5.]));
        let c = t.constant(Tensor::vector(vec![3., 5., 7.]));
        assert!(t.add(a, c).is_err());
        let d = t.sub(b, a).unwrap();
        assert_eq!(t.value(d).data(), &[2., 3.]);
        let e = t.mul(a, b).unwrap();
        assert_eq!(t.value(e).data(), &[3., 10.]);
        let f = t.scale(a, -2.0);
        assert_eq!(t.value(f).data(), &[-2., -4.]);
    }

    #[test]
    fn reduce_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1., 3.]));
        let mn = t.mean(x, None).unwrap();
        assert_eq!(t.value(mn).item(), 2.0);
        let i = t.constant(Tensor::eye(2));
        let s = t.sum(i, Some(0)).unwrap();
        assert_eq!(t.value(s).data(), &[1., 1.]);
        let v = t.constant(Tensor::vector(vec![2., 7., 5.]));
        let mx = t.max(v, Some(0)).unwrap();
        assert_eq!(t.value(mx).item(), 7.0);
        assert_eq!(t.argmax_indices(mx), Some(&[1usize][..]));
        assert!(matches!(
            t.sum(v, Some(1)),
            Err(Error::Axis { axis: 1, rank: 1 })
        ));
    }

    #[test]
    fn backward_examples() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let u = ps.add("u", Tensor::scalar(3.0));

        let mut t = Tape::new();
        let wv = t.param(&ps, w);
        let l = t.sum(wv, None).unwrap();
        t.backward(l, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad().unwrap(), &Tensor::ones(&[2, 3]));
        assert!(
            ps.get(u).grad().is_none(),
            "detached parameter must not get a grad"
        );

        let mut t = Tape::new();
        let uv = t.param(&ps, u);
        let sq = t.mul(uv, uv).unwrap();
        let l = t.sum(sq, None).unwrap();
        t.backward(l, &mut ps).unwrap();
        assert_eq!(ps.get(u).grad().unwrap().item(), 6.0);
        // second call accumulates
        t.backward(l, &mut ps).unwrap();
        assert_eq!(ps.get(u).grad().unwrap().item(), 12.0);
        ps.zero_grad();
        assert!(ps.get(u).grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::ones(&[2]));
        let mut t = Tape::new();
        let wv = t.param(&ps, w);
        assert!(matches!(
            t.backward(wv, &mut ps),
            Err(Error::NonScalarLoss(_))
        ));
    }

    #[test]
    fn grad_check_examples() {
        let half_sq = |t: &mut Tape, v: &[Var]| {
            let sq = t.mul(v[0], v[0])?;
            let s = t.sum(sq, None)?;
            Ok(t.scale(s, 0.5))
        };
        let w = Tensor::from_fn(&[3, 2], |i| 0.3 * i as f64 - 0.7);
        assert!(grad_check(half_sq, std::slice::from_ref(&w), 1e-4).unwrap() <= 1e-7);

        let constant = |t: &mut Tape, _v: &[Var]| Ok(t.constant(Tensor::scalar(4.0)));
        assert_eq!(grad_check(constant, std::slice::from_ref(&w), 1e-4).unwrap(), 0.0);

        assert!(grad_check(half_sq, &[w], 0.0).is_err());
    }

    #[test]
    fn channel_bias_values_and_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 1, 2]));
        let b = t.constant(Tensor::vector(vec![1.0, -3.0]));
        let y = t.add_channel_bias(x, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0, -3.0, -3.0]);
        let wrong = t.constant(Tensor::vector(vec![1.0]));
        assert!(t.add_channel_bias(x, wrong).is_err());

        let weights = Tensor::from_fn(&[2, 3], |i| 1.0 + i as f64);
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.add_channel_bias(v[0], v[1])?;
            let w = t.constant(weights.clone());
            let sq = t.mul(y, y)?;
            let p = t.mul(sq, w)?;
            t.sum(p, None)
        };
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.4 - 1.0);
        let b = Tensor::vector(vec![0.3, -0.7]);
        assert!(grad_check(f, &[x, b], 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn replicate_padding_values_and_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let k = t.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = t.conv2d_padded(x, k, 1, 1, PadMode::Replicate).unwrap();
        // top-left window reads [1,1,2; 1,1,2; 3,3,4]
        assert_eq!(t.value(y).data()[0], 18.0);

        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.conv2d_padded(v[0], v[1], 1, 1, PadMode::Replicate)?;
            let sq = t.mul(y, y)?;
            t.sum(sq, None)
        };
        let x = Tensor::from_fn(&[2, 3, 4], |i| ((i * 7 % 5) as f64 - 2.0) / 3.0);
        let k = Tensor::from_fn(&[2, 2, 3, 3], |i| ((i * 5 % 7) as f64 - 3.0) / 5.0);
        assert!(grad_check(f, &[x, k], 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn grad_check_reports_non_finite_objective() {
        let bad = |t: &mut Tape, v: &[Var]| {
            let l = t.log(v[0]);
            t.sum(l, None)
        };
        let err = grad_check(bad, &[Tensor::vector(vec![-1.0])], 1e-4).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn pointwise_1x1_conv_is_bit_identical_to_matmul() {
        let x = Tensor::from_fn(&[5, 3, 4], |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let k = Tensor::from_fn(&[7, 5, 1, 1], |i| ((i * 13 % 7) as f64 - 3.0) / 7.0);
        let mut t = Tape::new();
        let (xv, kv) = (t.constant(x.clone()), t.constant(k.clone()));
        let y = t.conv2d(xv, kv, 1, 0).unwrap();
        let mm = k
            .reshape(&[7, 5])
            .unwrap()
            .matmul(&x.reshape(&[5, 12]).unwrap())
            .unwrap();
        assert_eq!(t.value(y).data(), mm.data());
    }
}
