//! Experiment harness: synthetic data, perturbed test sets, batch
//! evaluation, runtime profiling, and report serialization. Everything the
//! CLI does is a thin wrapper over this module, so results are
//! reproducible from library code alone.

pub mod changemind;
pub mod evaluate;
pub mod panels;
pub mod perturb;
pub mod profile;
pub mod report;
pub mod shapes;

pub use changemind::{
    change_of_mind_grids, cross_normalized_change_of_mind, pose_grid_outcomes, CellOutcome,
    ChangeOfMindGrids,
};
pub use evaluate::{aggregate, evaluate, Aggregates, ConfigEcho, EvalReport, EvalRow};
pub use panels::{emit_panel, render_panel};
pub use perturb::{make_g_test_set, GSample, PerturbMode, PerturbationSpec};
pub use profile::{runtime_profile, ProfileConfig, ProfileRow};
pub use report::{
    eval_rows_csv, profile_rows_csv, read_json, strip_timings, write_csv, write_json,
    EVAL_CSV_HEADER, PROFILE_CSV_HEADER,
};
pub use shapes::{
    export_dataset, load_dataset, read_manifest, render_canonical, render_shapes, write_manifest,
    ManifestEntry, ShapeClass, ShapeSample, ShapesConfig, ShapesDataset, Split, SHAPE_CLASSES,
};
