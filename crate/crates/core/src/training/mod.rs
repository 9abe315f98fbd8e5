//! Stage losses, the preference-alignment objective, the optimizer loop,
//! and gradient verification.

mod gradcheck;
mod loss;
mod optim;
mod run;

pub use gradcheck::finite_diff_check;
pub use loss::{
    bdpo_from_logratios, bdpo_loss, bdpo_loss_with_grad, stage1_loss, stage1_loss_with_grad,
    stage2_loss, stage2_loss_with_grad, standard_dpo_loss, standard_dpo_loss_with_grad,
    BdpoHyperParams, LossBreakdown, PreferencePair, TrainError,
};
pub use optim::Adam;
pub use run::{sample_context, train, Stage, TrainConfig, TrainData, TrainLogRow, TrainOutcome};
