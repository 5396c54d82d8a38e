use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use robirank::data::{self, SyntheticLcrConfig, SyntheticRankConfig};
use robirank_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = rbk_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn ranking_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = data::make_synthetic_rank(&SyntheticRankConfig { num_contexts: 20, ..Default::default() }).unwrap();
    let (tp, vp) = (dir.path().join("train.txt"), dir.path().join("valid.txt"));
    let mut buf = Vec::new();
    data::write_letor(&s.train, &mut buf).unwrap();
    std::fs::write(&tp, &buf).unwrap();
    buf.clear();
    data::write_letor(&s.validation, &mut buf).unwrap();
    std::fs::write(&vp, &buf).unwrap();

    unsafe {
        let mut train = ptr::null_mut();
        let mut valid = ptr::null_mut();
        assert_eq!(rbk_ranking_dataset_load_letor(cstr(&tp).as_ptr(), &mut train), RbkStatus::Ok);
        assert_eq!(rbk_ranking_dataset_load_letor(cstr(&vp).as_ptr(), &mut valid), RbkStatus::Ok);
        assert_eq!(rbk_ranking_dataset_num_contexts(train), 20);
        assert_eq!(rbk_ranking_dataset_feature_dim(train), 10);

        let lambdas = [1e-3, 1.0];
        let mut model = ptr::null_mut();
        assert_eq!(rbk_linear_train(train, valid, lambdas.as_ptr(), 2, 0, &mut model), RbkStatus::Ok);
        let mut ndcg = 0.0;
        assert_eq!(rbk_linear_mean_ndcg(model, valid, 10, &mut ndcg), RbkStatus::Ok);
        assert!(ndcg >= 0.95, "{ndcg}");

        let feats = [0.5; 10];
        let mut a = 0.0;
        assert_eq!(rbk_linear_score(model, feats.as_ptr(), 10, &mut a), RbkStatus::Ok);
        let path = dir.path().join("m.bin");
        assert_eq!(rbk_linear_save(model, cstr(&path).as_ptr()), RbkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rbk_linear_load(cstr(&path).as_ptr(), &mut back), RbkStatus::Ok);
        let mut b = 0.0;
        assert_eq!(rbk_linear_score(back, feats.as_ptr(), 10, &mut b), RbkStatus::Ok);
        assert_eq!(a.to_bits(), b.to_bits());

        let mut w = vec![0.0; 10];
        assert_eq!(rbk_linear_weights(back, w.as_mut_ptr(), 10), RbkStatus::Ok);
        assert_eq!(rbk_linear_weights(back, w.as_mut_ptr(), 3), RbkStatus::InvalidArgument);

        assert_eq!(rbk_linear_score(back, feats.as_ptr(), 4, &mut b), RbkStatus::Shape);
        assert!(last_error().contains('4'));

        // loading a linear file as a latent model
        let mut wrong = ptr::null_mut();
        assert_eq!(rbk_latent_load(cstr(&path).as_ptr(), &mut wrong), RbkStatus::Checkpoint);
        assert!(wrong.is_null());

        rbk_linear_free(back);
        rbk_linear_free(model);
        rbk_ranking_dataset_free(train);
        rbk_ranking_dataset_free(valid);
    }
}

#[test]
fn latent_round_trip() {
    let s = data::make_synthetic_lcr(&SyntheticLcrConfig { blocks: 5, ..Default::default() }).unwrap();
    let split = |set: &robirank::lcr::InteractionSet| -> (Vec<usize>, Vec<usize>) { set.pairs().iter().copied().unzip() };
    let (tx, ty) = split(&s.train);
    let (sx, sy) = split(&s.test);
    unsafe {
        let mut train = ptr::null_mut();
        let mut test = ptr::null_mut();
        assert_eq!(rbk_interactions_new(30, 50, tx.as_ptr(), ty.as_ptr(), tx.len(), &mut train), RbkStatus::Ok);
        assert_eq!(rbk_interactions_new(30, 50, sx.as_ptr(), sy.as_ptr(), sx.len(), &mut test), RbkStatus::Ok);
        assert_eq!(rbk_interactions_len(train), tx.len());

        let mut model = ptr::null_mut();
        assert_eq!(rbk_latent_train(train, 5, 2.0, 50, 1, 0, &mut model), RbkStatus::Ok);
        let mut p1 = 0.0;
        assert_eq!(rbk_latent_precision_at_k(model, train, test, 1, &mut p1), RbkStatus::Ok);
        assert!(p1 >= 0.5, "{p1}");

        let mut par = ptr::null_mut();
        assert_eq!(rbk_latent_train(train, 5, 2.0, 5, 2, 0, &mut par), RbkStatus::Ok);
        assert_eq!(rbk_latent_train(train, 5, 0.0, 5, 2, 0, &mut par), RbkStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.bin");
        assert_eq!(rbk_latent_save(model, cstr(&path).as_ptr()), RbkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rbk_latent_load(cstr(&path).as_ptr(), &mut back), RbkStatus::Ok);
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(rbk_latent_objective(model, train, 0.0, &mut a), RbkStatus::Ok);
        assert_eq!(rbk_latent_objective(back, train, 0.0, &mut b), RbkStatus::Ok);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(rbk_latent_score(back, 0, 50, &mut a), RbkStatus::Shape);

        rbk_latent_free(back);
        rbk_latent_free(par);
        rbk_latent_free(model);
        rbk_interactions_free(train);
        rbk_interactions_free(test);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(rbk_ranking_dataset_load_letor(ptr::null(), &mut out), RbkStatus::NullArgument);
        assert_eq!(last_error(), "path is NULL");
        let missing = CString::new("/nonexistent/file.txt").unwrap();
        assert_eq!(rbk_ranking_dataset_load_letor(missing.as_ptr(), &mut out), RbkStatus::Io);
        assert!(last_error().contains("/nonexistent/file.txt"));

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "1 qid:1 2:0.5 1:0.3\n").unwrap();
        assert_eq!(rbk_ranking_dataset_load_letor(cstr(&bad).as_ptr(), &mut out), RbkStatus::Parse);

        let xs = [0usize, 0];
        let ys = [1usize, 1];
        let mut set = ptr::null_mut();
        assert_eq!(rbk_interactions_new(1, 2, xs.as_ptr(), ys.as_ptr(), 2, &mut set), RbkStatus::InvalidData);
        assert_eq!(rbk_interactions_new(1, 2, xs.as_ptr(), ys.as_ptr(), 1, ptr::null_mut()), RbkStatus::NullArgument);

        // freeing NULL is a no-op
        rbk_linear_free(ptr::null_mut());
        rbk_latent_free(ptr::null_mut());
        assert_eq!(rbk_linear_dim(ptr::null()), 0);
    }
}

fn header_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_dir().join("robirank.h")).unwrap();
    let source = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct RbkLatentModel RbkLatentModel;"));
    assert!(header.contains("RBK_STATUS_OK = 0"));
}

#[test]
fn c_program_links_against_static_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("librobirank_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "robirank.h"
int main(void) {
    size_t xs[3] = {0, 1, 1};
    size_t ys[3] = {0, 1, 2};
    RbkInteractions *data = NULL;
    if (rbk_interactions_new(2, 3, xs, ys, 3, &data) != RBK_STATUS_OK) return 1;
    RbkLatentModel *model = NULL;
    if (rbk_latent_train(data, 2, 0.5, 3, 1, 7, &model) != RBK_STATUS_OK) return 2;
    double obj = 0.0;
    if (rbk_latent_objective(model, data, 0.0, &obj) != RBK_STATUS_OK) return 3;
    double s;
    if (rbk_latent_score(model, 5, 0, &s) != RBK_STATUS_SHAPE) return 4;
    if (strstr(rbk_last_error_message(), "5") == NULL) return 5;
    rbk_latent_free(model);
    rbk_interactions_free(data);
    printf("%.6f\n", obj);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_dir())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    let obj: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(obj > 0.0);
}
