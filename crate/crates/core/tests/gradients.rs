//! Central finite differences against the tape's analytic gradients.

mod common;

use common::checks::{self, FdReport, FD_TOL};

fn assert_fd(r: FdReport, min_checked: usize) {
    assert!(r.worst < FD_TOL, "worst relative error {}", r.worst);
    assert!(r.checked > min_checked, "only {} entries checked", r.checked);
}

#[test]
fn backbone_total_loss() {
    assert_fd(checks::fd_backbone_total(), 50);
}

#[test]
fn frame_network() {
    assert_fd(checks::fd_frame_network(), 20);
}

#[test]
fn physiome_total_loss_with_open_restoration_path() {
    assert_fd(checks::fd_physiome_open(), 100);
}

#[test]
fn physiome_contrastive_term_reaches_adapters() {
    assert_fd(checks::fd_physiome_adapters(), 10);
}

#[test]
fn physiome_total_loss_with_stop_gradient() {
    assert_fd(checks::fd_physiome_stopped(), 50);
}
