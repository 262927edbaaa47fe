use fcanet::gradsuite::{model_cases, primitive_cases, run_suite};

#[test]
fn primitives_match_finite_differences() {
    for r in run_suite(&primitive_cases()).unwrap() {
        println!("{:<24} seeds {:>2} coords {:>5} max rel err {:.2e}", r.name, r.seeds, r.coords, r.max_rel_error);
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn tiny_networks_match_finite_differences() {
    for r in run_suite(&model_cases(1)).unwrap() {
        println!("{:<24} coords {:>5} max rel err {:.2e}", r.name, r.coords, r.max_rel_error);
        assert!(r.passed(), "{r:?}");
    }
}
