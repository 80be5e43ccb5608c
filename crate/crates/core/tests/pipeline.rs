use statsep::io::{load_real, save_real};
use statsep::metrics::psnr;
use statsep::noise::{sample, NoiseModel};
use statsep::separation::{vanilla_separate, SeparationConfig, WphRepresentation};
use statsep::synthdata::{generate, TextureKind, TextureSpec};
use statsep::wavelets::{build_bank, default_scales};
use statsep::wph::{ClassMask, NormalizationRef};

#[test]
fn texture_survives_grid_file() {
    let f = generate(&TextureSpec::new(TextureKind::GaussianRandomField, (24, 40), 11)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.ssf");
    save_real(&p, &f).unwrap();
    assert_eq!(load_real(&p).unwrap(), f);
}

#[test]
fn vanilla_denoising_beats_the_observation() {
    let n = 32;
    let x0 = generate(&TextureSpec::new(TextureKind::LognormalField, (n, n), 5)).unwrap();
    let noise = NoiseModel::white(1.0, (n, n)).unwrap();
    let y = &x0 + &sample(&noise, 6);
    let bank = build_bank(n, n, default_scales(n, n), 4).unwrap();
    let nref = NormalizationRef::from_field(&y, &bank).unwrap();
    let rep = WphRepresentation::normalized(bank, ClassMask::ALL, &nref).unwrap();
    let cfg = SeparationConfig {
        q: 20,
        iterations: 15,
        seed: 7,
        ..Default::default()
    };
    let (x, trace) = vanilla_separate(&y, &noise, &rep, &cfg).unwrap();
    assert!(trace.abort.is_none());
    assert_eq!(trace.records.len(), 15);
    let before = psnr(&y, &x0).unwrap();
    let after = psnr(&x, &x0).unwrap();
    assert!(after > before + 1.0, "{before:.2} -> {after:.2} dB");
}
