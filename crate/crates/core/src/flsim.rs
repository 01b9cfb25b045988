//! Victim side of one collaborative round, plus bit-exact serialization of
//! the shared gradient.
//!
//! Capture file layout (`GINV1`): an ASCII header of `GINV1`, `model <hex>`,
//! `label <int|unknown>`, `trainsteps <int>` and `len <int>` lines, a `data`
//! line, then `len` little-endian IEEE-754 binary64 values in flat order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::GradientCapture;
use crate::model::{param_gradient, Model, ModelSpec, ParamStore};
use crate::rng::{self, stream};
use crate::synth::{generate_synthetic, Split, SyntheticSpec};
use crate::tensor::Tensor;

/// Plain SGD on single samples, the federation's own optimizer for the
/// pre-attack training stage.
pub fn sgd_train(
    spec: &ModelSpec,
    store: &ParamStore,
    data: &[(Tensor, usize)],
    steps: u32,
    lr: f64,
) -> Result<ParamStore> {
    if data.is_empty() {
        return Err(Error::Invalid("sgd_train requires a non-empty dataset".into()));
    }
    let model = Model::build(spec)?;
    let layout = store.layout().clone();
    let mut flat = store.flatten().into_parts().1;
    let mut current = store.clone();
    for step in 0..steps as usize {
        let (image, label) = &data[step % data.len()];
        let grad = param_gradient(&model, &current, image, *label)?;
        for (p, g) in flat.iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
        current = ParamStore::from_flat(layout.clone(), &Tensor::from_vec(flat.clone()))?;
    }
    Ok(current)
}

/// Run the victim's round: optionally train for `train_steps` SGD steps
/// (lr 0.1) on held-out data, then share the gradient of the secret sample.
/// Returns the capture and the parameters it was taken against.
pub fn victim_round(
    spec: &ModelSpec,
    store: &ParamStore,
    image: &Tensor,
    label: usize,
    train_steps: u32,
    train_data: &[(Tensor, usize)],
) -> Result<(GradientCapture, ParamStore)> {
    if label >= spec.classes {
        return Err(Error::LabelOutOfRange { label, classes: spec.classes });
    }
    let trained = if train_steps > 0 {
        sgd_train(spec, store, train_data, train_steps, 0.1)?
    } else {
        store.clone()
    };
    let model = Model::build(spec)?;
    let flat = param_gradient(&model, &trained, image, label)?;
    let capture = GradientCapture {
        flat,
        fingerprint: spec.fingerprint(),
        label: Some(label),
        train_steps,
    };
    Ok((capture, trained))
}

/// Held-out training samples for the pre-attack stage, derived from the
/// parameter seed so that victim and attacker replay the same trajectory
/// without shipping the data.
pub fn derived_train_data(spec: &ModelSpec, params_seed: u64) -> Result<Vec<(Tensor, usize)>> {
    let synth = SyntheticSpec {
        classes: spec.classes,
        victims_per_class: 0,
        priors_per_class: 0,
        train_per_class: 16,
        channels: spec.input[0],
        height: spec.input[1],
        width: spec.input[2],
        sigma_intra: 0.1,
        separation: 1.0,
        seed: rng::derive(params_seed, stream::VICTIM_TRAIN),
    };
    let ds = generate_synthetic(&synth)?;
    Ok(ds
        .split(Split::Train)
        .map(|s| ((*s.image).clone(), s.class))
        .collect())
}

/// Reproduce the model state a capture was taken against: deterministic
/// initialization from `params_seed` plus `train_steps` SGD steps on the
/// derived held-out data.
pub fn realize_params(spec: &ModelSpec, params_seed: u64, train_steps: u32) -> Result<ParamStore> {
    let store = ParamStore::init(spec, params_seed)?;
    if train_steps == 0 {
        return Ok(store);
    }
    let data = derived_train_data(spec, params_seed)?;
    sgd_train(spec, &store, &data, train_steps, 0.1)
}

pub fn write_capture_to(capture: &GradientCapture, mut w: impl Write) -> Result<()> {
    w.write_all(b"GINV1\n")?;
    write!(w, "model {:016x}\n", capture.fingerprint)?;
    match capture.label {
        Some(l) => write!(w, "label {l}\n")?,
        None => w.write_all(b"label unknown\n")?,
    }
    write!(w, "trainsteps {}\n", capture.train_steps)?;
    write!(w, "len {}\n", capture.flat.numel())?;
    w.write_all(b"data\n")?;
    for v in capture.flat.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Atomically write a capture file (temp file + rename).
pub fn write_capture(capture: &GradientCapture, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_capture_to(capture, &mut bytes)?;
    crate::fsutil::write_atomic(path, &bytes)
}

fn header_line<'a>(lines: &mut std::str::Lines<'a>, what: &str) -> Result<&'a str> {
    lines
        .next()
        .ok_or_else(|| Error::CaptureFormat(format!("truncated header, missing {what} line")))
}

fn expect_field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::CaptureFormat(format!("expected `{key} <value>` line, got {line:?}")))
}

pub fn read_capture_from(mut r: impl Read) -> Result<GradientCapture> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    let data_marker = b"\ndata\n";
    let marker_pos = bytes
        .windows(data_marker.len())
        .position(|w| w == data_marker)
        .ok_or_else(|| Error::CaptureFormat("missing data marker".into()))?;
    let header = std::str::from_utf8(&bytes[..marker_pos])
        .map_err(|_| Error::CaptureFormat("header is not valid ASCII".into()))?;
    let payload = &bytes[marker_pos + data_marker.len()..];

    let mut lines = header.lines();
    let magic = header_line(&mut lines, "magic")?;
    if magic != "GINV1" {
        return Err(Error::CaptureFormat(format!(
            "bad magic/version: expected GINV1, got {magic:?}"
        )));
    }
    let fingerprint = {
        let v = expect_field(header_line(&mut lines, "model")?, "model")?;
        u64::from_str_radix(v, 16)
            .map_err(|_| Error::CaptureFormat(format!("invalid model fingerprint {v:?}")))?
    };
    let label = {
        let v = expect_field(header_line(&mut lines, "label")?, "label")?;
        if v == "unknown" {
            None
        } else {
            Some(
                v.parse::<usize>()
                    .map_err(|_| Error::CaptureFormat(format!("invalid label {v:?}")))?,
            )
        }
    };
    let train_steps = {
        let v = expect_field(header_line(&mut lines, "trainsteps")?, "trainsteps")?;
        v.parse::<u32>()
            .map_err(|_| Error::CaptureFormat(format!("invalid trainsteps {v:?}")))?
    };
    let len = {
        let v = expect_field(header_line(&mut lines, "len")?, "len")?;
        v.parse::<usize>()
            .map_err(|_| Error::CaptureFormat(format!("invalid len {v:?}")))?
    };
    if lines.next().is_some() {
        return Err(Error::CaptureFormat("unexpected extra header lines".into()));
    }
    if payload.len() != len * 8 {
        return Err(Error::CaptureFormat(format!(
            "payload length mismatch: header says {} values ({} bytes), found {} bytes",
            len,
            len * 8,
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(len);
    for chunk in payload.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
    }
    Ok(GradientCapture {
        flat: Tensor::from_vec(data),
        fingerprint,
        label,
        train_steps,
    })
}

pub fn read_capture(path: &Path) -> Result<GradientCapture> {
    let file = std::fs::File::open(path)?;
    read_capture_from(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn sample_capture() -> GradientCapture {
        GradientCapture {
            flat: Tensor::from_vec(vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300]),
            fingerprint: 0xdead_beef_0123_4567,
            label: Some(2),
            train_steps: 7,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cap = sample_capture();
        let mut buf = Vec::new();
        write_capture_to(&cap, &mut buf).unwrap();
        assert!(buf.starts_with(b"GINV1\n"));
        let back = read_capture_from(&buf[..]).unwrap();
        assert_eq!(back.fingerprint, cap.fingerprint);
        assert_eq!(back.label, cap.label);
        assert_eq!(back.train_steps, cap.train_steps);
        assert!(back
            .flat
            .data()
            .iter()
            .zip(cap.flat.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn unknown_label_round_trips() {
        let cap = GradientCapture { label: None, ..sample_capture() };
        let mut buf = Vec::new();
        write_capture_to(&cap, &mut buf).unwrap();
        assert_eq!(read_capture_from(&buf[..]).unwrap().label, None);
    }

    #[test]
    fn corrupt_magic_fails_closed() {
        let mut buf = Vec::new();
        write_capture_to(&sample_capture(), &mut buf).unwrap();
        buf[4] = b'2'; // GINV1 -> GINV2
        match read_capture_from(&buf[..]) {
            Err(Error::CaptureFormat(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_length_mismatch_fail() {
        let mut buf = Vec::new();
        write_capture_to(&sample_capture(), &mut buf).unwrap();
        assert!(read_capture_from(&buf[..buf.len() - 1]).is_err());
        buf.extend_from_slice(&[0u8; 3]);
        assert!(read_capture_from(&buf[..]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.ginv");
        let cap = sample_capture();
        write_capture(&cap, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"GINV1\n"));
        assert_eq!(read_capture(&path).unwrap(), cap);
    }

    #[test]
    fn zero_train_steps_equals_param_gradient() {
        let spec = ModelSpec::convnet_s(3);
        let (model, store) = build_model(&spec, 50).unwrap();
        let image = Tensor::filled(&[1, 16, 16], 0.42);
        let (cap, trained) = victim_round(&spec, &store, &image, 2, 0, &[]).unwrap();
        let direct = param_gradient(&model, &store, &image, 2).unwrap();
        assert_eq!(cap.flat.data(), direct.data());
        assert_eq!(cap.train_steps, 0);
        assert_eq!(trained.flatten().data(), store.flatten().data());

        let (cap2, _) = victim_round(&spec, &store, &image, 2, 0, &[]).unwrap();
        assert!(cap
            .flat
            .data()
            .iter()
            .zip(cap2.flat.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn realize_params_matches_victim_round_state() {
        let spec = ModelSpec::convnet_s(3);
        let store = ParamStore::init(&spec, 77).unwrap();
        let data = derived_train_data(&spec, 77).unwrap();
        assert_eq!(data.len(), 3 * 16);
        let image = Tensor::filled(&[1, 16, 16], 0.3);
        let (_, trained) = victim_round(&spec, &store, &image, 0, 25, &data).unwrap();
        let realized = realize_params(&spec, 77, 25).unwrap();
        assert!(trained
            .flatten()
            .data()
            .iter()
            .zip(realized.flatten().data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn training_changes_parameters_deterministically() {
        let spec = ModelSpec::convnet_s(2);
        let (_, store) = build_model(&spec, 51).unwrap();
        let mut a = Tensor::filled(&[1, 16, 16], 0.2);
        a.data_mut()[0] = 0.9;
        let b = Tensor::filled(&[1, 16, 16], 0.7);
        let data = vec![(a, 0), (b, 1)];
        let t1 = sgd_train(&spec, &store, &data, 10, 0.1).unwrap();
        let t2 = sgd_train(&spec, &store, &data, 10, 0.1).unwrap();
        assert!(t1
            .flatten()
            .data()
            .iter()
            .zip(t2.flatten().data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(t1.flatten().data(), store.flatten().data());
    }
}
