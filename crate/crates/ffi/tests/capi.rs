use std::ffi::{CStr, CString};
use std::ptr;

use synthgen::acceptance::{toy_vocabulary, TOY_VOCAB};
use synthgen::dataset::{coordinate_scale, generate_dataset, prepare_records, GenConfig};
use synthgen::denoiser::tabular::FitConfig;
use synthgen::denoiser::TabularDenoiser;
use synthgen::record::MoleculeRecord;
use synthgen_ffi::*;

fn last_error() -> String {
    let p = synthgen_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fitted_model(dir: &std::path::Path) -> CString {
    let vocab = toy_vocabulary();
    let cfg = GenConfig {
        count: 30,
        seed: 3,
        ..GenConfig::default()
    };
    let records = generate_dataset(&vocab, &cfg).unwrap();
    let z = coordinate_scale(&records).unwrap();
    let prepared = prepare_records(&records, &vocab, z).unwrap();
    let fit = FitConfig {
        epochs: 1,
        ..FitConfig::default()
    };
    let model = TabularDenoiser::fit(&prepared, &vocab, z, fit).unwrap();
    let path = dir.join("model.json");
    model.save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(synthgen_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn vocab_roundtrip_through_handles() {
    let text = CString::new(TOY_VOCAB).unwrap();
    let mut v = ptr::null_mut();
    assert_eq!(
        unsafe { synthgen_vocab_from_toml(text.as_ptr(), &mut v) },
        SynthgenStatus::Ok
    );
    assert!(synthgen_last_error().is_null());
    let expected = toy_vocabulary();
    unsafe {
        assert_eq!(synthgen_vocab_num_blocks(v), expected.num_blocks());
        assert_eq!(synthgen_vocab_num_reactions(v), expected.num_reactions());
        synthgen_vocab_free(v);
        assert_eq!(synthgen_vocab_num_blocks(ptr::null()), 0);
        synthgen_vocab_free(ptr::null_mut());
    }
}

#[test]
fn error_codes() {
    let mut v = ptr::null_mut();
    unsafe {
        assert_eq!(synthgen_vocab_load(ptr::null(), &mut v), SynthgenStatus::NullPointer);
        assert!(last_error().contains("path"));
        let bad = CString::new("[[blocks]]\nname = 3").unwrap();
        assert_eq!(synthgen_vocab_from_toml(bad.as_ptr(), &mut v), SynthgenStatus::Parse);
        assert!(v.is_null());
        let text = CString::new(TOY_VOCAB).unwrap();
        assert_eq!(
            synthgen_vocab_from_toml(text.as_ptr(), ptr::null_mut()),
            SynthgenStatus::NullPointer
        );

        assert_eq!(synthgen_vocab_from_toml(text.as_ptr(), &mut v), SynthgenStatus::Ok);
        let missing = CString::new("/nonexistent/model.json").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(synthgen_model_load(missing.as_ptr(), v, &mut m), SynthgenStatus::Io);
        assert!(last_error().contains("nonexistent"));

        let opts = synthgen_sample_options_default();
        let mut s = ptr::null_mut();
        assert_eq!(
            synthgen_sample(v, ptr::null(), &opts, &mut s),
            SynthgenStatus::NullPointer
        );
        synthgen_vocab_free(v);
    }
}

#[test]
fn sample_through_c_api() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = fitted_model(dir.path());
    let text = CString::new(TOY_VOCAB).unwrap();
    let vocab = toy_vocabulary();
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(synthgen_vocab_from_toml(text.as_ptr(), &mut v), SynthgenStatus::Ok);
        let mut m = ptr::null_mut();
        assert_eq!(synthgen_model_load(model_path.as_ptr(), v, &mut m), SynthgenStatus::Ok);

        let mut opts = synthgen_sample_options_default();
        opts.count = 6;
        opts.steps = 20;
        opts.seed = 11;
        let draw = |opts: &SynthgenSampleOptions| {
            let mut s = ptr::null_mut();
            assert_eq!(synthgen_sample(v, m, opts, &mut s), SynthgenStatus::Ok);
            let n = synthgen_samples_len(s);
            let lines: Vec<Option<String>> = (0..n)
                .map(|k| {
                    let p = synthgen_samples_line(s, k);
                    (!p.is_null()).then(|| CStr::from_ptr(p).to_string_lossy().into_owned())
                })
                .collect();
            let valid: Vec<bool> = (0..n).map(|k| synthgen_samples_is_valid(s, k)).collect();
            assert!(synthgen_samples_line(s, n).is_null());
            synthgen_samples_free(s);
            (lines, valid)
        };
        let (lines, valid) = draw(&opts);
        assert_eq!(lines.len(), 6);
        for (line, ok) in lines.iter().zip(&valid) {
            let line = line.as_ref().expect("sample succeeded");
            let rec = MoleculeRecord::parse_line(line, 1).unwrap();
            assert!(rec.coords.is_some());
            assert_eq!(*ok, synthgen::graph::check_validity(&rec.graph, &vocab).is_valid());
            assert!(*ok, "constrained sample is valid");
        }
        assert_eq!(draw(&opts).0, lines);

        opts.n_blocks = 2;
        let (fixed, _) = draw(&opts);
        for line in fixed.iter().flatten() {
            assert_eq!(MoleculeRecord::parse_line(line, 1).unwrap().graph.n(), 2);
        }

        opts.steps = 0;
        let mut s = ptr::null_mut();
        assert_eq!(synthgen_sample(v, m, &opts, &mut s), SynthgenStatus::InvalidArgument);
        assert!(last_error().contains("steps"));

        synthgen_model_free(m);
        synthgen_vocab_free(v);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/synthgen.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/synthgen.h");
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-std=c99", "-x", "c", header])
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
