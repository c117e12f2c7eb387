//! Source training and teacher-student adaptation.
//!
//! Each step draws MC-dropout pseudo-labels from the teacher on the clean
//! image and from the student on an augmented copy, masks unreliable pixels,
//! blends the two streams per image by mean confidence, and trains the
//! student with one Adam step. The teacher then tracks the student by EMA.

mod augment;
mod config;
mod loss;
mod run;
mod step;

pub use augment::{augment, plan_augmentation, AugmentPlan, Rect};
pub use config::{AdaptConfig, Augmentation, SourceTraining, Toggles};
pub use loss::{diversity_loss, masked_ce, supervision_weights};
pub use run::{adapt_run, epoch_batches, train_source, AdaptOutcome};
pub use step::{
    adapt_step, build_objective, make_pseudo_labels, ObjectiveItem, ObjectiveValue, PseudoLabels, StepObjective,
    StepReport, StepStats, Supervision,
};
