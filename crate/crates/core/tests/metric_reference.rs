//! SSIM fixtures frozen from scikit-image's structural_similarity
//! (gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
//! data_range=1.0, win_size=11) on deterministically generated images.

use gradinvert::metrics::ssim;
use gradinvert::Tensor;

#[test]
fn ssim_matches_reference_implementation() {
    // Checkerboard against its inversion: strongly negative similarity.
    let mut a = Tensor::zeros(&[1, 16, 16]);
    for i in 0..16 {
        for j in 0..16 {
            a.data_mut()[i * 16 + j] = if (i + j) % 2 == 0 { 0.95 } else { 0.05 };
        }
    }
    let inv = Tensor::new(vec![1, 16, 16], a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let s = ssim(&a, &inv).unwrap();
    assert!((s - (-0.9955654101995557)).abs() < 1e-9, "got {s}");
    assert!(s < 0.5);

    // Smooth separable field against a perturbed copy.
    let x: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
    let mut g1 = Tensor::zeros(&[1, 16, 16]);
    let mut g2 = Tensor::zeros(&[1, 16, 16]);
    for i in 0..16 {
        for j in 0..16 {
            let v = ((3.0 * x[i]).sin() + 1.0) * ((2.0 * x[j]).cos() + 1.0) / 4.0;
            g1.data_mut()[i * 16 + j] = v;
            g2.data_mut()[i * 16 + j] = (v + 0.1 * (7.0 * x[i] * (x[j] + 0.3)).sin()).clamp(0.0, 1.0);
        }
    }
    let s2 = ssim(&g1, &g2).unwrap();
    assert!((s2 - 0.908538664041975).abs() < 1e-9, "got {s2}");
}
