mod common;

use common::{desk_run, overfit_losses, DESK_SEED};

#[test]
fn desk_scale_scene_is_learned() {
    let run = desk_run(DESK_SEED);
    eprintln!("desk-scale OA {:.4} in {:.1?}", run.oa, run.elapsed);
    assert!(run.oa >= 0.95, "OA {}", run.oa);
    assert_eq!(run.history.epochs.len(), 30);
    let first = run.history.epochs[0].train_loss;
    let last = run.history.epochs[29].train_loss;
    assert!(last < first / 3.0, "{first} -> {last}");
}

#[test]
fn single_batch_overfits() {
    let losses = overfit_losses(200, 1e-3);
    let hit = losses.iter().position(|&l| l < 0.01);
    assert!(hit.is_some(), "last losses {:?}", &losses[190..]);
}

#[test]
fn small_steps_descend() {
    let losses = overfit_losses(10, 1e-4);
    assert!(losses[9] < losses[0], "{losses:?}");
}
