use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::process::Command;
use std::ptr;

use svidr::data::Dataset;
use svidr::inference::{fit, FitConfig};
use svidr::model::{Model, ModelSpec};
use svidr_ffi::*;

const CONFIG: &str = r#"
[model]
family = "gaussian"
[[model.terms.mu]]
kind = "pspline"
covariate = "x"
num_knots = 5
[fit]
family = "local_full"
tau_mode = "point"
epochs = 150
seed = 7
"#;

fn csv() -> String {
    let mut s = String::from("y,x\n");
    for i in 0..30 {
        let x = i as f64 / 29.0;
        s.push_str(&format!("{},{}\n", (5.0 * x).cos() + 0.05 * ((i * 31) % 7) as f64, x));
    }
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(svidr_last_error_message()) }.to_string_lossy().into_owned()
}

fn fit_handle(config: &str, data: &str) -> Result<*mut SvidrFit, (SvidrStatus, String)> {
    let c = CString::new(config).unwrap();
    let d = CString::new(data).unwrap();
    let mut h = ptr::null_mut();
    let st = unsafe { svidr_fit_from_toml(c.as_ptr(), d.as_ptr(), &mut h) };
    if st == SvidrStatus::Ok {
        Ok(h)
    } else {
        assert!(h.is_null());
        Err((st, last_error()))
    }
}

#[test]
fn handle_matches_direct_fit() {
    let h = fit_handle(CONFIG, &csv()).unwrap();
    #[derive(serde::Deserialize)]
    struct Cfg {
        model: ModelSpec,
        fit: FitConfig,
    }
    let cfg: Cfg = toml::from_str(CONFIG).unwrap();
    let data = Dataset::read_csv(csv().as_bytes()).unwrap();
    let model = Model::new(&cfg.model, &data).unwrap();
    let direct = fit(&model, &cfg.fit).unwrap();

    let mut q = 0usize;
    assert_eq!(unsafe { svidr_fit_num_coefficients(h, &mut q) }, SvidrStatus::Ok);
    assert_eq!(q, direct.posterior.mean.len());
    let mut mean = vec![0.0; q];
    let mut sd = vec![0.0; q];
    assert_eq!(unsafe { svidr_fit_mean(h, mean.as_mut_ptr(), q) }, SvidrStatus::Ok);
    assert_eq!(unsafe { svidr_fit_sd(h, sd.as_mut_ptr(), q) }, SvidrStatus::Ok);
    assert_eq!(mean, direct.posterior.mean);
    assert_eq!(sd, direct.posterior.marginal_sd());

    let mut nt = 0usize;
    assert_eq!(unsafe { svidr_fit_num_tau(h, &mut nt) }, SvidrStatus::Ok);
    let mut tau = vec![0.0; nt];
    assert_eq!(unsafe { svidr_fit_tau(h, tau.as_mut_ptr(), nt) }, SvidrStatus::Ok);
    assert_eq!(tau, direct.tau.location());

    let mut ne = 0usize;
    assert_eq!(unsafe { svidr_fit_num_epochs(h, &mut ne) }, SvidrStatus::Ok);
    assert_eq!(ne, 150);
    let mut trace = vec![0.0; ne];
    assert_eq!(unsafe { svidr_fit_elbo_trace(h, trace.as_mut_ptr(), ne) }, SvidrStatus::Ok);
    assert_eq!(trace, direct.elbo_trace);

    let labels = model.design.coefficient_labels();
    for (i, want) in labels.iter().enumerate() {
        let mut needed = 0usize;
        let st = unsafe { svidr_fit_label(h, i, ptr::null_mut(), 0, &mut needed) };
        assert_eq!(st, SvidrStatus::BufferTooSmall);
        assert_eq!(needed, want.len() + 1);
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(unsafe { svidr_fit_label(h, i, buf.as_mut_ptr(), needed, ptr::null_mut()) }, SvidrStatus::Ok);
        assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), want);
    }
    assert_eq!(unsafe { svidr_fit_label(h, q, ptr::null_mut(), 0, ptr::null_mut()) }, SvidrStatus::OutOfRange);
    unsafe { svidr_fit_free(h) };
}

#[test]
fn posterior_json_round_trips() {
    let h = fit_handle(CONFIG, &csv()).unwrap();
    let mut needed = 0usize;
    unsafe { svidr_fit_posterior_json(h, ptr::null_mut(), 0, &mut needed) };
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { svidr_fit_posterior_json(h, buf.as_mut_ptr(), needed, ptr::null_mut()) }, SvidrStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    let artifact: svidr::cli::artifact::PosteriorArtifact = serde_json::from_str(text).unwrap();
    artifact.check().unwrap();
    let mut q = 0usize;
    unsafe { svidr_fit_num_coefficients(h, &mut q) };
    assert_eq!(artifact.labels.len(), q);
    unsafe { svidr_fit_free(h) };
}

#[test]
fn failures_report_status_and_message() {
    let (st, msg) = fit_handle("[model]\nfamily = \"nope\"\n", &csv()).unwrap_err();
    assert_eq!(st, SvidrStatus::Config);
    assert!(msg.contains("configuration"), "{msg}");
    let (st, msg) = fit_handle(CONFIG, "y,x\n1.0,abc\n").unwrap_err();
    assert_eq!(st, SvidrStatus::Data);
    assert!(!msg.is_empty());
    let bad_fit = CONFIG.replace("epochs = 150", "epochs = 0");
    let (st, _) = fit_handle(&bad_fit, &csv()).unwrap_err();
    assert_eq!(st, SvidrStatus::Config);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { svidr_fit_from_toml(ptr::null(), ptr::null(), &mut h) }, SvidrStatus::NullPointer);
    let mut q = 0usize;
    assert_eq!(unsafe { svidr_fit_num_coefficients(ptr::null(), &mut q) }, SvidrStatus::NullPointer);
    assert!(last_error().contains("null"));
    unsafe { svidr_fit_free(ptr::null_mut()) };
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(svidr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "svidr.h"

int main(int argc, char **argv) {
    const char *cfg = "[model]\nfamily = \"gaussian_known_sd\"\nnoise_sd = 1.0\n"
                      "[fit]\nfamily = \"local_full\"\ntau_mode = \"fixed\"\nepochs = 40\nseed = 1\n";
    SvidrFit *fit = NULL;
    if (svidr_fit_from_toml(cfg, "y\n1.0\n2.0\n3.5\n", &fit) != SVIDR_STATUS_OK) {
        fprintf(stderr, "%s\n", svidr_last_error_message());
        return 1;
    }
    size_t q = 0;
    double mean[4];
    char label[64];
    if (svidr_fit_num_coefficients(fit, &q) != SVIDR_STATUS_OK || q != 1) return 2;
    if (svidr_fit_mean(fit, mean, 4) != SVIDR_STATUS_OK) return 3;
    if (svidr_fit_label(fit, 0, label, sizeof label, NULL) != SVIDR_STATUS_OK) return 4;
    printf("%s %.17g\n", label, mean[0]);
    svidr_fit_free(fit);
    if (svidr_fit_from_toml("[model]\n", "y\n1\n", &fit) != SVIDR_STATUS_CONFIG || fit != NULL) return 5;
    if (strlen(svidr_last_error_message()) == 0) return 6;
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_shared_library() {
    let target = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().to_path_buf();
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libsvidr_ffi.so");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no shared library at {} or no C compiler", lib.display());
        return;
    }
    let work = target.join("tmp").join("ffi_c_smoke");
    fs::create_dir_all(&work).unwrap();
    let src = work.join("smoke.c");
    let exe = work.join("smoke");
    fs::write(&src, C_SMOKE).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .arg("-L")
        .arg(&profile_dir)
        .arg("-lsvidr_ffi")
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(cc.status.success(), "cc: {}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).env("LD_LIBRARY_PATH", &profile_dir).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let (label, mean) = stdout.trim().split_once(' ').unwrap();
    assert_eq!(label, "mu:intercept");

    let h = fit_handle(
        "[model]\nfamily = \"gaussian_known_sd\"\nnoise_sd = 1.0\n[fit]\nfamily = \"local_full\"\ntau_mode = \"fixed\"\nepochs = 40\nseed = 1\n",
        "y\n1.0\n2.0\n3.5\n",
    )
    .unwrap();
    let mut m = [0.0];
    unsafe { svidr_fit_mean(h, m.as_mut_ptr(), 1) };
    unsafe { svidr_fit_free(h) };
    assert_eq!(mean.parse::<f64>().unwrap(), m[0]);
}
