use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use hcs_contrast_ffi::*;

fn last_error() -> String {
    let p = hcs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn random_batch(n: usize, m: usize, d: usize, seed: u64) -> *mut HcsBatch {
    let mut batch = ptr::null_mut();
    assert_eq!(
        unsafe { hcs_batch_random_unit(n, m, d, seed, &mut batch) },
        HcsStatus::Ok
    );
    batch
}

#[test]
fn loss_matches_closed_form_at_identical_point() {
    let (n, m, d) = (5, 3, 4);
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    let mol: Vec<f64> = v.iter().cycle().take(n * d).copied().collect();
    let img: Vec<f64> = v.iter().cycle().take(n * m * d).copied().collect();
    let mut batch = ptr::null_mut();
    unsafe {
        assert_eq!(
            hcs_batch_new(n, m, d, mol.as_ptr(), img.as_ptr(), &mut batch),
            HcsStatus::Ok
        );
        let cfg = HcsLossConfig {
            gamma: 0.0,
            ..hcs_loss_config_default()
        };
        let mut value = 0.0;
        let mut grad_mol = vec![f64::NAN; n * d];
        let mut grad_img = vec![f64::NAN; n * m * d];
        let status = hcs_loss_evaluate(
            HcsLossKind::Emm,
            batch,
            &cfg,
            &mut value,
            grad_mol.as_mut_ptr(),
            grad_img.as_mut_ptr(),
        );
        assert_eq!(status, HcsStatus::Ok);
        assert!((value - ((n - 1) as f64).ln()).abs() < 1e-10);
        assert!(grad_mol.iter().chain(&grad_img).all(|g| g.is_finite()));
        hcs_batch_free(batch);
    }
}

#[test]
fn grad_check_through_the_abi() {
    let batch = random_batch(4, 3, 8, 1);
    let cfg = hcs_loss_config_default();
    for kind in [HcsLossKind::Emm, HcsLossKind::Imm] {
        let mut err = f64::NAN;
        assert_eq!(
            unsafe { hcs_grad_check(kind, batch, &cfg, 1e-6, &mut err) },
            HcsStatus::Ok
        );
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
    unsafe { hcs_batch_free(batch) };
}

#[test]
fn errors_carry_status_and_message() {
    let batch = random_batch(4, 1, 8, 0);
    let cfg = hcs_loss_config_default();
    let mut value = 0.0;
    let status = unsafe {
        hcs_loss_evaluate(
            HcsLossKind::Imm,
            batch,
            &cfg,
            &mut value,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HcsStatus::InvalidArgument);
    assert!(last_error().contains("intra term undefined"));

    let status = unsafe {
        hcs_loss_evaluate(
            HcsLossKind::Clip,
            ptr::null(),
            &cfg,
            &mut value,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HcsStatus::NullPointer);
    assert!(last_error().contains("batch"));

    let status = unsafe {
        hcs_loss_evaluate(
            HcsLossKind::Clip,
            batch,
            &cfg,
            &mut value,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HcsStatus::Ok);
    assert!(hcs_last_error().is_null());

    let mut err = 0.0;
    let status = unsafe { hcs_grad_check(HcsLossKind::Clip, batch, &cfg, 0.5, &mut err) };
    assert_eq!(status, HcsStatus::InvalidArgument);
    unsafe { hcs_batch_free(batch) };

    let mut table = ptr::null_mut();
    let missing = CString::new("/nonexistent/embeddings.csv").unwrap();
    assert_eq!(
        unsafe { hcs_embeddings_read_csv(missing.as_ptr(), &mut table) },
        HcsStatus::Io
    );
    assert!(table.is_null());
}

#[test]
fn oracle_retrieval_is_perfect() {
    let (n, d) = (150, 16);
    // Hashed coordinates in [-1, 1): distinct directions with no ties.
    let mol: Vec<f64> = (0..(n * d) as u64)
        .map(|i| {
            let h = (i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29);
            (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    let owners: Vec<usize> = (0..n).collect();
    let mut table = ptr::null_mut();
    unsafe {
        let status = hcs_embeddings_new(n, n, d, mol.as_ptr(), mol.as_ptr(), owners.as_ptr(), &mut table);
        assert_eq!(status, HcsStatus::Ok);
        let ks = [1usize, 5, 10];
        let mut hr = [0.0; 3];
        let mut mrr = 0.0;
        for dir in [HcsDirection::ImgToMol, HcsDirection::MolToImg] {
            let status = hcs_retrieval_evaluate(table, 100, ks.as_ptr(), ks.len(), dir, 0, hr.as_mut_ptr(), &mut mrr);
            assert_eq!(status, HcsStatus::Ok);
            assert_eq!(hr, [1.0; 3]);
            assert_eq!(mrr, 1.0);
        }
        let bad_owner = vec![n; n];
        let mut other = ptr::null_mut();
        let status = hcs_embeddings_new(n, n, d, mol.as_ptr(), mol.as_ptr(), bad_owner.as_ptr(), &mut other);
        assert_eq!(status, HcsStatus::InvalidArgument);
        hcs_embeddings_free(table);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/hcs_contrast.h");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header])
            .output()
        {
            Ok(out) => assert!(
                out.status.success(),
                "{compiler}: {}",
                String::from_utf8_lossy(&out.stderr)
            ),
            Err(e) => eprintln!("{compiler} unavailable ({e}); header not compiled"),
        }
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libhcs_contrast_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; C link check not run", lib.display());
        return;
    }
    let dir = tempfile_dir();
    let bin = dir.join("smoke");
    let root = env!("CARGO_MANIFEST_DIR");
    let compile = Command::new("cc")
        .arg(format!("{root}/examples/smoke.c"))
        .arg(format!("-I{root}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output();
    let out = match compile {
        Ok(out) => out,
        Err(e) => {
            eprintln!("cc unavailable ({e}); C link check not run");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("imm "));
    std::fs::remove_dir_all(dir).ok();
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hcs-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
