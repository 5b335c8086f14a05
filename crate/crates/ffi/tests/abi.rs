use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use kuramoto_pinn_ffi::*;

fn last_error() -> String {
    let p = kp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn small_options() -> KpTrainOptions {
    KpTrainOptions {
        epochs: 10,
        n_colloc: 32,
        n_ic: 16,
        n_quad: 16,
        ..kp_train_options_default()
    }
}

#[test]
fn defaults_match_the_library() {
    let p = kp_problem_default();
    assert_eq!(p.coupling, 1.0);
    assert_eq!(p.horizon, 1.0);
    assert_eq!(p.initial_condition, KpInitialCondition::Polynomial);
    let o = kp_train_options_default();
    assert_eq!((o.epochs, o.n_colloc, o.n_ic, o.n_quad), (4096, 1024, 512, 128));
    let v = unsafe { CStr::from_ptr(kp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_save_load_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let problem = kp_problem_default();
    let options = small_options();
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(kp_network_new(KpActivation::Tanh, 2, 8, 7, &mut net), KpStatus::Ok);
        assert_eq!(kp_network_param_count(net), 3 * 8 + 9 * 8 + 9);

        let mut history = vec![0.0; options.epochs];
        let mut loss = KpLoss::default();
        assert_eq!(
            kp_network_train(net, &problem, &options, history.as_mut_ptr(), &mut loss),
            KpStatus::Ok
        );
        assert!(loss.total < history[0]);
        assert!((loss.total - (loss.residual + loss.initial_condition)).abs() < 1e-15);

        let theta = [0.5, 3.0];
        let t = [0.0, 0.7];
        let mut before = [0.0; 2];
        assert_eq!(
            kp_network_forward(net, theta.as_ptr(), t.as_ptr(), 2, before.as_mut_ptr()),
            KpStatus::Ok
        );

        let path = c_path(&dir.path().join("net.params"));
        assert_eq!(kp_network_save(net, path.as_ptr()), KpStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(kp_network_load(path.as_ptr(), &mut loaded), KpStatus::Ok);
        let mut after = [0.0; 2];
        assert_eq!(
            kp_network_forward(loaded, theta.as_ptr(), t.as_ptr(), 2, after.as_mut_ptr()),
            KpStatus::Ok
        );
        assert_eq!(before, after);

        let mut reference = ptr::null_mut();
        assert_eq!(kp_reference_solve(&problem, 64, 5, 0.9, &mut reference), KpStatus::Ok);
        let (mut cells, mut levels) = (0, 0);
        assert_eq!(kp_reference_dims(reference, &mut cells, &mut levels), KpStatus::Ok);
        assert_eq!((cells, levels), (64, 5));
        let mut values = vec![0.0; cells * levels];
        assert_eq!(
            kp_reference_values(reference, values.as_mut_ptr(), values.len()),
            KpStatus::Ok
        );
        assert_eq!(
            kp_reference_values(reference, values.as_mut_ptr(), 3),
            KpStatus::InvalidInput
        );

        let ref_path = c_path(&dir.path().join("ref.csv"));
        assert_eq!(kp_reference_save(reference, ref_path.as_ptr()), KpStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(kp_reference_load(ref_path.as_ptr(), &mut reloaded), KpStatus::Ok);

        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(kp_energy_norm(net, &problem, reference, &mut a), KpStatus::Ok);
        assert_eq!(kp_energy_norm(loaded, &problem, reloaded, &mut b), KpStatus::Ok);
        assert!(a > 0.0);
        assert!((a - b).abs() <= 1e-12 * a);

        let other = KpProblem {
            coupling: 2.0,
            ..problem
        };
        assert_eq!(kp_energy_norm(net, &other, reference, &mut a), KpStatus::InvalidInput);

        kp_reference_free(reloaded);
        kp_reference_free(reference);
        kp_network_free(loaded);
        kp_network_free(net);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(
            kp_network_new(KpActivation::Relu, 0, 4, 1, &mut net),
            KpStatus::InvalidInput
        );
        assert!(last_error().contains("depth"), "{}", last_error());
        assert!(net.is_null());

        assert_eq!(
            kp_network_new(KpActivation::Tanh, 1, 4, 1, ptr::null_mut()),
            KpStatus::NullPointer
        );
        assert_eq!(kp_network_load(ptr::null(), &mut net), KpStatus::NullPointer);

        let missing = CString::new("/nonexistent/dir/net.params").unwrap();
        assert_eq!(kp_network_load(missing.as_ptr(), &mut net), KpStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.params");
        std::fs::write(&junk, "not a checkpoint").unwrap();
        assert_eq!(kp_network_load(c_path(&junk).as_ptr(), &mut net), KpStatus::Format);

        let problem = kp_problem_default();
        let mut reference = ptr::null_mut();
        assert_eq!(
            kp_reference_solve(&problem, 64, 5, 1.5, &mut reference),
            KpStatus::Numerical
        );

        let mut out = 0.0;
        assert_eq!(
            kp_energy_norm(ptr::null(), &problem, ptr::null(), &mut out),
            KpStatus::NullPointer
        );
        kp_network_free(ptr::null_mut());
        kp_reference_free(ptr::null_mut());
        assert_eq!(kp_network_param_count(ptr::null()), 0);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps/
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = target_dir().join("libkuramoto_pinn_ffi.a");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("kuramoto_pinn.h").exists());
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header_dir)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let output = Command::new(&exe).output().unwrap();
    assert!(
        output.status.success(),
        "C program failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(String::from_utf8_lossy(&output.stdout).starts_with("ok "));
}
