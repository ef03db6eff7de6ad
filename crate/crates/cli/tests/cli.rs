use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use permkron::kron::KronSum;
use permkron::{
    save_tensors, DenseMatrix, Dtype, NamedTensor, NamedTensorFile, PermutationVec, PermutedKronDecomposition,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permkron(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_permkron"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

fn key_values(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter(|l| !l.starts_with("layer="))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> PermutationVec {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    PermutationVec::new(map).unwrap()
}

/// Writes `planted` (a shuffled 2x3 ⊗ 4x2) and `noise` (8x6) to `path`.
fn write_planted(path: &Path) -> (DenseMatrix, DenseMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = DenseMatrix::random(2, 3, &mut rng).kron(&DenseMatrix::random(4, 2, &mut rng));
    let (p, c) = (shuffled(8, &mut rng), shuffled(6, &mut rng));
    let planted = c.inverse().permute_cols(&p.inverse().permute_rows(&k));
    let noise = DenseMatrix::random(8, 6, &mut rng);
    let file = NamedTensorFile::from_entries(vec![
        NamedTensor::from_matrix("planted", &planted, Dtype::F64),
        NamedTensor::from_matrix("noise", &noise, Dtype::F64),
        NamedTensor::from_vector("noise.bias", &[1.0; 8], Dtype::F64).unwrap(),
    ])
    .unwrap();
    save_tensors(&file, path).unwrap();
    (planted, noise)
}

#[test]
fn decompose_planted_tensor_with_and_without_permutations() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pktn");
    write_planted(&input);
    let plan = dir.path().join("plan.txt");
    std::fs::write(&plan, "# planted split\ntensor=planted a=2x3 b=4x2\ntensor=noise a=2x3 b=4x2 rank=2\n").unwrap();
    let out = dir.path().join("out.pktn");

    let o = permkron(&[
        "decompose",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with(
        "tensor,m,n,m1,n1,m2,n2,rank,perm,abs_residual,rel_residual,params_before,params_after,iters,seconds\n"
    ));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["tensor"], "planted");
    assert!(num(&rows[0], "rel_residual") < 1e-8);
    assert_eq!(rows[0]["params_after"], (6 + 8 + 8 + 6).to_string());
    assert_eq!(rows[1]["rank"], "2");
    let rel = num(&rows[1], "rel_residual");
    assert!((0.0..=1.0).contains(&rel));

    // the sidecar and the output file describe the same run
    let meta = std::fs::read_to_string(dir.path().join("out.pktn.meta")).unwrap();
    let records = permkron::store::parse_sidecar(&meta).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].residual, num(&rows[0], "abs_residual"));
    let written = permkron::load_tensors(&out).unwrap();
    assert!(written.get("noise.bias").is_some());
    assert!(written.get("planted.P").is_some());

    let csv_path = dir.path().join("report.csv");
    let o = permkron(&[
        "decompose",
        "-i",
        input.to_str().unwrap(),
        "-o",
        dir.path().join("vanilla.pktn").to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
        "--no-perm",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let vanilla = csv_rows(&std::fs::read_to_string(&csv_path).unwrap());
    assert_eq!(vanilla[0]["perm"], "false");
    assert!(num(&vanilla[0], "abs_residual") > num(&rows[0], "abs_residual"));
}

#[test]
fn decompose_rejects_mismatched_plan_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pktn");
    write_planted(&input);
    let plan = dir.path().join("plan.txt");
    std::fs::write(&plan, "tensor=planted a=2x2 b=4x2\n").unwrap();
    let out = dir.path().join("out.pktn");
    let args = |plan: &Path, input: &Path| {
        permkron(&[
            "decompose",
            "-i",
            input.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
            "--plan",
            plan.to_str().unwrap(),
        ])
    };

    let o = args(&plan, &input);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("`planted`") && msg.contains("n1*n2 = 2*2 = 4"), "{msg}");
    assert!(!out.exists());

    std::fs::write(&plan, "tensor=absent a=2x3 b=4x2\n").unwrap();
    let o = args(&plan, &input);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent"));

    let o = args(&plan, &dir.path().join("missing.pktn"));
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(dir.path().join("junk.pktn"), b"not a tensor file").unwrap();
    let o = args(&plan, &dir.path().join("junk.pktn"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_random_corpus_never_loses_to_vanilla() {
    let o = permkron(&[
        "bench-perm", "--random", "100", "--shape", "16x16", "--a", "4x4", "--b", "4x4", "--seed", "3", "--jobs", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[100]["tensor"], "mean");
    for r in &rows[..100] {
        assert!(num(r, "permuted_residual") <= num(r, "vanilla_residual"), "{}", r["tensor"]);
    }
    assert!(stderr(&o).contains("100/100"));
}

#[test]
fn bench_exact_and_planted_corpora() {
    let o = permkron(&["bench-perm", "--random", "10", "--a", "2x3", "--b", "3x2", "--kind", "kron"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in &csv_rows(&stdout(&o))[..10] {
        assert!(num(r, "vanilla_rel") < 1e-10 && num(r, "permuted_rel") < 1e-10);
    }

    let o = permkron(&["bench-perm", "--random", "10", "--a", "3x2", "--b", "3x3", "--kind", "planted"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    let recovered = rows[..10].iter().filter(|r| num(r, "permuted_rel") < 1e-8).count();
    assert!(recovered >= 9, "recovered {recovered}/10");
    assert!(rows[..10].iter().all(|r| num(r, "vanilla_rel") > 0.0));

    let o = permkron(&["bench-perm", "--random", "2", "--shape", "5x5", "--a", "2x2", "--b", "2x2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_reads_a_corpus_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pktn");
    write_planted(&input);
    let o = permkron(&["bench-perm", "-i", input.to_str().unwrap(), "--a", "2x3", "--b", "4x2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0]["tensor"], "planted");
    assert!(num(&rows[0], "permuted_rel") < 1e-8);
}

fn ffn_decomposition() -> PermutedKronDecomposition {
    PermutedKronDecomposition::new(
        PermutationVec::identity(768),
        PermutationVec::identity(3072),
        KronSum::single(DenseMatrix::zeros(768, 1536), DenseMatrix::zeros(1, 2)),
        true,
        0.0,
    )
    .unwrap()
}

#[test]
fn report_counts_table_shapes_and_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ffn.pktn");
    let d = ffn_decomposition();
    let file = NamedTensorFile::from_entries(d.to_tensors("h.0.mlp.c_fc", Dtype::F32).unwrap()).unwrap();
    save_tensors(&file, &path).unwrap();
    let o = permkron(&["report", "-i", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["params_after"], "1183490");
    assert_eq!(rows[1]["tensor"], "total");
    assert_eq!(rows[1]["params_after"], "1183490");
    assert_eq!(rows[1]["params_before"], (768 * 3072).to_string());

    let empty = dir.path().join("empty.pktn");
    save_tensors(&NamedTensorFile::new(), &empty).unwrap();
    let o = permkron(&["report", "-i", empty.to_str().unwrap()]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0]["params_before"].as_str(), rows[0]["params_after"].as_str()), ("0", "0"));
}

#[test]
fn report_errors_match_decompose_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pktn");
    write_planted(&input);
    let plan = dir.path().join("plan.txt");
    std::fs::write(&plan, "tensor=planted a=2x3 b=4x2\ntensor=noise a=2x3 b=4x2 rank=2\n").unwrap();
    let out = dir.path().join("out.pktn");
    let o = permkron(&[
        "decompose",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = csv_rows(&stdout(&o));

    let o = permkron(&["report", "-i", out.to_str().unwrap(), "--original", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = csv_rows(&stdout(&o));
    for r in &run {
        let rep = report.iter().find(|x| x["tensor"] == r["tensor"]).unwrap();
        let (a, b) = (num(r, "abs_residual"), num(rep, "abs_residual"));
        assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{}: {a} vs {b}", r["tensor"]);
        assert_eq!(r["params_after"], rep["params_after"]);
    }
    let bias = report.iter().find(|x| x["tensor"] == "noise.bias").unwrap();
    assert_eq!(bias["kind"], "dense");

    // an original file without the decomposed tensors is a name mismatch
    let other = dir.path().join("other.pktn");
    let file = NamedTensorFile::from_entries(vec![NamedTensor::from_vector("x", &[1.0], Dtype::F64).unwrap()]).unwrap();
    save_tensors(&file, &other).unwrap();
    let o = permkron(&["report", "-i", out.to_str().unwrap(), "--original", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn distill_demo_runs_and_ablations_behave() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let ck = dir.path().join("ck");
    let o = permkron(&["distill-demo", "--checkpoint", ck.to_str().unwrap(), "--csv", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let kv = key_values(&text);
    let teacher: f64 = kv["teacher_accuracy"].parse().unwrap();
    let student: f64 = kv["student_accuracy"].parse().unwrap();
    let ratio: f64 = kv["compression_ratio"].parse().unwrap();
    assert!(student >= 0.9 * teacher, "{student} vs {teacher}");
    assert!(ratio > 1.0);
    assert!(ck.join("teacher.pktn").exists() && ck.join("student-2.pktn").exists());
    let metrics = csv_rows(&std::fs::read_to_string(&log).unwrap());
    assert_eq!(metrics[0]["iteration"], "0");

    let layer_residuals = |text: &str| -> Vec<f64> {
        text.lines()
            .filter(|l| l.starts_with("layer="))
            .map(|l| {
                let f: HashMap<_, _> = l.split(' ').filter_map(|p| p.split_once('=')).collect();
                f["residual"].parse().unwrap()
            })
            .collect()
    };
    let perm_on = layer_residuals(&text);
    assert_eq!(perm_on.len(), 2);

    let o = permkron(&["distill-demo", "--no-perm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let perm_off = layer_residuals(&stdout(&o));
    for (on, off) in perm_on.iter().zip(&perm_off) {
        assert!(off >= on, "{off} < {on}");
    }

    let o = permkron(&["distill-demo", "--epochs", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kv = key_values(&stdout(&o));
    assert_eq!(kv["student_accuracy"], kv["raw_accuracy"]);
}
