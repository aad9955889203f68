use edgeunet::uew::{read_weights, write_weights, DType, Entry, Payload, Uew, UewError, WeightFile, UP_PATH};
use edgeunet_core::datagen::{gen_sample, SynthSpec};
use edgeunet_core::quant::{calibrate, quantize_weights};
use edgeunet_core::{build_graph, generate_random_weights, Graph, ModelSpec, Tensor};

fn toy() -> (Graph, WeightFile, WeightFile) {
    let spec: ModelSpec = "3/4/Y/1.2".parse().unwrap();
    let g = build_graph(&spec.with_input_size(32, 32, 3).unwrap()).unwrap();
    let w = generate_random_weights(&g, 4);
    let images: Vec<Tensor> = (0..2)
        .map(|i| {
            let s = SynthSpec { height: 32, width: 32, disc_center: (16, 16), disc_radii: (10, 9), cup_radii: (4, 5), seed: i, ..SynthSpec::default() };
            gen_sample(&s).unwrap().image
        })
        .collect();
    let q = quantize_weights(&g, &w, &calibrate(&g, &w, &images).unwrap()).unwrap();
    (g, WeightFile::Float(w), WeightFile::Quant(q))
}

#[test]
fn write_read_write_is_byte_identical() {
    let (_, f, q) = toy();
    let dir = tempfile::tempdir().unwrap();
    for (name, w) in [("f.uew", f), ("q.uew", q)] {
        let path = dir.path().join(name);
        write_weights(&path, &w).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = read_weights(&path).unwrap();
        assert_eq!(back, w);
        write_weights(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }
}

#[test]
fn float_payloads_are_bit_exact() {
    let (g, WeightFile::Float(mut w), _) = toy() else { unreachable!() };
    let k = w.params.get_mut("enc0_conv1.kernel").unwrap();
    k.data[0] = f32::from_bits(0x0000_0001);
    k.data[1] = -0.0;
    let back = WeightFile::decode(&WeightFile::Float(w.clone()).encode()).unwrap();
    let WeightFile::Float(b) = back else { panic!() };
    for (name, p) in &w.params {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.data), bits(&b.params[name].data), "{name}");
    }
    b.validate(&g).unwrap();
}

#[test]
fn any_single_payload_byte_flip_fails_the_checksum() {
    let (_, f, _) = toy();
    let bytes = f.encode();
    let last = f.to_uew().entries.pop().unwrap();
    let payload = last.payload.len() * last.payload.dtype().size();
    for at in (bytes.len() - 4 - payload..bytes.len() - 4).step_by(7) {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        assert!(matches!(Uew::decode(&bad), Err(UewError::Checksum { .. })), "byte {at}");
    }
}

#[test]
fn float_and_quant_files_differ_in_flags_and_dtypes() {
    let (_, f, q) = toy();
    let (fu, qu) = (f.to_uew(), q.to_uew());
    let (fb, qb) = (f.encode(), q.encode());
    let flags_at = 4 + 2 + 4 + fu.spec.len();
    assert_eq!(fb[flags_at], 0);
    assert_eq!(qb[flags_at], 1);
    let meta = |e: &&Entry| e.name.starts_with("meta/");
    assert!(fu.entries.iter().filter(|e| !meta(e)).all(|e| e.payload.dtype() == DType::F32 && e.qp.is_none()));
    for e in qu.entries.iter().filter(|e| !meta(e)) {
        let want = if e.name.starts_with("act/") || e.name.ends_with(".kernel") { DType::I8 } else { DType::I32 };
        assert_eq!(e.payload.dtype(), want, "{}", e.name);
        assert!(e.qp.is_some());
    }
    assert!(fu.entries.iter().any(|e| e.name.ends_with(".gamma")));
    assert!(!qu.entries.iter().any(|e| e.name.ends_with(".gamma")));
}

#[test]
fn truncation_at_every_length_is_an_error() {
    let (_, _, q) = toy();
    let bytes = q.encode();
    for len in (0..bytes.len()).step_by(97) {
        assert!(Uew::decode(&bytes[..len]).is_err(), "len {len}");
    }
}

#[test]
fn shape_mismatch_is_caught_against_the_graph() {
    let (g, WeightFile::Float(mut w), _) = toy() else { unreachable!() };
    let p = w.params.get_mut("head.bias").unwrap();
    p.shape = vec![1, 1];
    let back = WeightFile::decode(&WeightFile::Float(w).encode()).unwrap();
    let WeightFile::Float(b) = back else { panic!() };
    assert!(b.validate(&g).is_err());
}

#[test]
fn metadata_carries_note_and_up_path() {
    let (_, f, _) = toy();
    let u = f.to_uew();
    let text = |name: &str| match &u.entries.iter().find(|e| e.name == name).unwrap().payload {
        Payload::I8(b) => String::from_utf8(b.iter().map(|&v| v as u8).collect()).unwrap(),
        other => panic!("{other:?}"),
    };
    assert_eq!(text("meta/up_path"), UP_PATH);
    assert_eq!(text("meta/note"), f.note());

    let mut other = u.clone();
    let e = other.entries.iter_mut().find(|e| e.name == "meta/up_path").unwrap();
    *e = Entry { dims: vec![6], payload: Payload::I8(b"resize".iter().map(|&b| b as i8).collect()), ..e.clone() };
    assert!(matches!(WeightFile::decode(&other.encode()), Err(UewError::Layout(m)) if m.contains("up path")));
    let mut missing = u.clone();
    missing.entries.retain(|e| e.name != "meta/up_path");
    assert!(WeightFile::decode(&missing.encode()).is_err());
}
