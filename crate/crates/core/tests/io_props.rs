use flowguard::tensorio::{decode_tensor, encode_tensor, read_tensor, write_tensor, DatasetManifest, ManifestRecord};
use flowguard::{Error, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn tensor() -> impl Strategy<Value = Tensor> {
    vec(1usize..5, 1..5).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        vec(finite_f32(), n).prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
    })
}

fn record() -> impl Strategy<Value = ManifestRecord> {
    (
        "[a-z][a-z0-9_-]{0,6}",
        ".{0,16}",
        0u8..2,
        proptest::sample::subsequence((0..50usize).collect::<Vec<_>>(), 0..8),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(model_id, prompt, label, steps, recon, fin)| ManifestRecord {
            latent_paths: steps.iter().map(|s| format!("{model_id}/z_{s}.fgt")).collect(),
            recon_paths: recon.then(|| steps.iter().map(|s| format!("{model_id}/x_{s}.fgt")).collect()),
            final_image_path: fin.then(|| "final.fgt".to_string()),
            model_id,
            prompt,
            label,
            steps,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tensor_bytes_roundtrip(t in tensor()) {
        let bytes = encode_tensor(&t).unwrap();
        prop_assert_eq!(bytes.len(), 8 + 4 * t.dims().len() + 4 * t.len());
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn manifest_json_roundtrip(records in vec(record(), 0..6)) {
        let m = DatasetManifest { total_steps: 50, records, generator: None };
        let back = DatasetManifest::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn truncation_is_detected(t in tensor(), cut in 1usize..64) {
        let bytes = encode_tensor(&t).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_tensor(&bytes[..keep]).is_err());
    }
}

#[test]
fn file_roundtrip_and_header_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![2, 3], vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, -7.25, 1e-40]).unwrap();
    let p = dir.path().join("t.fgt");
    write_tensor(&t, &p).unwrap();
    let raw = std::fs::read(&p).unwrap();
    assert_eq!(&raw[..8], b"FGT1\x00\x02\x00\x00");
    assert_eq!(&raw[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
    assert_eq!(read_tensor(&p).unwrap(), t);

    let mut bad = raw.clone();
    bad[0] = b'X';
    assert!(matches!(decode_tensor(&bad), Err(Error::BadMagic(_))));
    let mut bad = raw.clone();
    bad[4] = 1;
    assert!(matches!(decode_tensor(&bad), Err(Error::UnknownDtype(1))));
    let mut bad = raw.clone();
    bad.push(0);
    assert!(matches!(decode_tensor(&bad), Err(Error::TrailingBytes(1))));
    assert!(matches!(decode_tensor(&raw[..20]), Err(Error::Truncated { .. })));
    assert!(read_tensor(dir.path().join("missing.fgt")).unwrap_err().is_io());
}
