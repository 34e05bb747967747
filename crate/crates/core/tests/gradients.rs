use thumbqc_core::gradcheck::{suite, GradCheckReport};

const TOL: f64 = 1e-3;

fn check(name: &str, report: GradCheckReport) {
    let (worst, g) = report.worst().expect("at least one tensor");
    assert!(
        report.passes(TOL),
        "{name}: {worst} has relative error {:.3e} (analytic {:.6e}, numeric {:.6e})",
        g.max_rel_error,
        g.worst_analytic,
        g.worst_numeric
    );
}

#[test]
fn head_gradients() {
    let r = suite::head(1).unwrap();
    assert!(r.groups.contains_key("input"));
    assert!(r.groups.keys().any(|k| k.contains("norm")));
    check("head", r);
}

#[test]
fn attention_pool_gradients() {
    check("attention pool", suite::attention_pool(2).unwrap());
}

#[test]
fn tile_transformer_gradients() {
    check("tile transformer", suite::tile_transformer(3).unwrap());
}

#[test]
fn soft_vote_path_gradients() {
    let r = suite::soft_vote_path(4).unwrap();
    assert!(r.groups.keys().any(|k| k.starts_with("backbone")));
    check("soft vote path", r);
}

#[test]
fn desk_vit_gradients() {
    check("desk vit", suite::desk_vit(5).unwrap());
}
