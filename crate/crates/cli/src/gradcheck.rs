use memdisc::exec::collect_ordered;
use memdisc::numcore::{gradcheck, GradcheckOptions, GradcheckReport};
use memdisc::Exec;

use crate::error::{in_component, CliError};

/// Outcome of a gradcheck run; `warning` is set for an empty seed range.
pub struct GradcheckSummary {
    pub reports: Vec<GradcheckReport>,
    pub warning: Option<String>,
}

/// Checks every operator on every seed. The first breach in seed order is
/// reported with the operator name and seed.
pub fn cmd_gradcheck(
    seeds: &[u64],
    opts: &GradcheckOptions,
    exec: Exec,
) -> Result<GradcheckSummary, CliError> {
    if seeds.is_empty() {
        return Ok(GradcheckSummary {
            reports: Vec::new(),
            warning: Some("empty seed range, nothing checked".into()),
        });
    }
    let reports = collect_ordered(exec.map_slice(seeds, |&s| gradcheck(s, opts)))
        .map_err(in_component("gradcheck"))?;
    for r in &reports {
        if let Some(op) = r.failures(&opts.tolerances).first() {
            return Err(CliError::Check(format!(
                "{op} exceeds tolerance on seed {} (grad_params {:.3e}, grad_input {:.3e}, hvp {:.3e}, mixed {:.3e})",
                r.seed, r.grad_params, r.grad_input, r.hvp, r.mixed
            )));
        }
    }
    Ok(GradcheckSummary {
        reports,
        warning: None,
    })
}
