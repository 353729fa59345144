use stocorient::corralg::pipeline::{end_to_end, E2eParams};
use stocorient::lowerbound::{build_tree, to_rational_instance, Variant};
use stocorient::policy::eval_na_exact;
use stocorient::random::{random_instance, RandomSpec};
use stocorient::report::{policy_from_json, policy_to_json};
use stocorient::{validate_instance, Instance};

#[test]
fn reloaded_instance_gives_the_same_policy() {
    let spec = RandomSpec {
        grid: 1,
        ..RandomSpec::small(4, 4)
    };
    let inst = random_instance(spec, 77);
    let back = Instance::from_json_str(&inst.to_json_string(None)).unwrap();
    assert_eq!(back, inst);
    let params = E2eParams {
        seed: 9,
        trials: 3,
        ..E2eParams::default()
    };
    let a = end_to_end(&inst, &params).unwrap();
    let b = end_to_end(&back, &params).unwrap();
    assert_eq!(a, b);
    let pol = policy_from_json(policy_to_json(&a.policy)).unwrap();
    assert_eq!(eval_na_exact(&back, &pol).unwrap(), a.value);
}

#[test]
fn lower_bound_instances_survive_json() {
    for levels in 1..=4 {
        let t = build_tree(levels).unwrap();
        for variant in [Variant::DirectedTree, Variant::UndirectedTree, Variant::Line] {
            let inst = to_rational_instance(&t, variant);
            let back = Instance::from_json_str(&inst.to_json_string(None)).unwrap();
            assert!(validate_instance(&back).is_valid());
            assert_eq!(back.budget(), inst.budget());
            assert_eq!(back.order(), inst.order());
            for a in 0..inst.n() {
                for b in 0..inst.n() {
                    assert_eq!(back.dist(a, b), inst.dist(a, b));
                }
            }
        }
    }
}
