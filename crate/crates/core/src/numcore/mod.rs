//! Deterministic numerical core: model evaluation, analytic gradients, SGD,
//! divergences and finite-difference second-order operators.
//!
//! All functions are pure and single-threaded; sample loops accumulate in
//! index order so results are bit-reproducible.

mod divergence;
mod gradcheck;
mod matrix;
mod mlp;
mod optim;
mod second_order;

pub use divergence::{divergence_grad_input, js_div, kl_div, Measure};
pub use gradcheck::{
    dense_hessian_times, dense_mixed_times, gradcheck, max_rel_error, norm_rel_error,
    tiny_problem, GradcheckOptions, GradcheckReport, Tolerances,
};
pub use matrix::Matrix;
pub use mlp::{
    argmax, cross_entropy_loss, forward_logits, forward_probs, grad_input, grad_params,
    loss_and_grad, per_sample_losses, softmax, Activation, Batch, ModelShape, ParamState,
    DOMAIN_SLACK, PROB_FLOOR,
};
pub use optim::sgd_step;
pub use second_order::{default_fd_step, fd_hvp, fd_mixed_grad_input};

