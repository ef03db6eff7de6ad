use permkron::distill::{run_demo, DemoConfig};
use permkron::{Error, Result};

use crate::records::{emit, MetricsRow};
use crate::DemoArgs;

pub fn run(args: DemoArgs) -> Result<()> {
    let mut cfg = DemoConfig::with_seed(args.seed);
    if let Some(e) = args.epochs {
        cfg.student.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.student.learning_rate = lr;
    }
    cfg.use_permutations = !args.no_perm;
    if let Some(dir) = &args.checkpoint {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        cfg.checkpoint_dir = Some(dir.clone());
    }

    let out = run_demo(&cfg)?;
    for r in &out.distill.log {
        eprintln!("{r}");
    }
    println!("teacher_accuracy={}", out.teacher_accuracy);
    println!("raw_accuracy={}", out.raw_accuracy);
    println!("student_accuracy={}", out.student_accuracy);
    println!("teacher_params={}", out.teacher_params);
    println!("student_params={}", out.student_params);
    println!("compression_ratio={}", out.compression_ratio());
    for c in &out.distill.compressions {
        println!(
            "layer={} iteration={} residual={} rel_residual={} params_before={} params_after={}",
            c.layer, c.iteration, c.residual, c.rel_residual, c.params_before, c.params_after
        );
    }
    if let Some(path) = &args.csv {
        let rows: Vec<MetricsRow> = out
            .distill
            .log
            .iter()
            .map(|r| MetricsRow {
                iteration: r.iteration,
                step: r.step,
                loss: r.loss,
                accuracy: r.accuracy,
                params: r.params,
                residual: r.residual,
            })
            .collect();
        emit(&rows, Some(path))?;
    }
    Ok(())
}
