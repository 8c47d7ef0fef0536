//! Randomized check of the table vector-space laws.
//!
//! Each law runs over freshly generated tables of at most eight entries.
//! Two laws are known not to hold under union addition and are tracked as
//! expected deviations: they count how often the law breaks instead of
//! counting as failures.

use serde::Serialize;

use crate::random::{ActionMix, Gen};
use crate::tables::{add, negate_table, reduce, scalar_mul, table_equal, FlowTable, Gf2};

pub const MAX_ENTRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// A documented deviation showed up on every case.
    ExpectedDeviation,
    /// A documented deviation did not show up on some case.
    DeviationNotObserved,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::ExpectedDeviation => "EXPECTED-DEVIATION",
            Status::DeviationNotObserved => "DEVIATION-NOT-OBSERVED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AxiomResult {
    pub name: &'static str,
    pub law: &'static str,
    pub deviation: bool,
    pub cases: usize,
    /// Cases where the law did not hold.
    pub violations: usize,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AxiomReport {
    pub seed: u64,
    pub cases: usize,
    pub results: Vec<AxiomResult>,
}

impl AxiomReport {
    /// True when every non-deviation law held on every case.
    pub fn all_laws_hold(&self) -> bool {
        self.results.iter().filter(|r| !r.deviation).all(|r| r.violations == 0)
    }

    pub fn get(&self, name: &str) -> Option<&AxiomResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

struct Law {
    name: &'static str,
    law: &'static str,
    deviation: bool,
    // returns None when the law holds, otherwise a description of the case
    check: fn(&mut Gen) -> Option<String>,
}

fn tbl(g: &mut Gen) -> FlowTable {
    g.table(MAX_ENTRIES, ActionMix::Any)
}

fn show(tables: &[&FlowTable]) -> String {
    let parts: Vec<String> = tables.iter().map(|t| serde_json::to_string(t).expect("tables serialize")).collect();
    parts.join(" | ")
}

fn holds(ok: bool, tables: &[&FlowTable]) -> Option<String> {
    if ok {
        None
    } else {
        Some(show(tables))
    }
}

const LAWS: &[Law] = &[
    Law {
        name: "add-associative",
        law: "(t1 + t2) + t3 = t1 + (t2 + t3)",
        deviation: false,
        check: |g| {
            let (a, b, c) = (tbl(g), tbl(g), tbl(g));
            holds(table_equal(&add(&add(&a, &b), &c), &add(&a, &add(&b, &c))), &[&a, &b, &c])
        },
    },
    Law {
        name: "add-commutative",
        law: "t1 + t2 = t2 + t1",
        deviation: false,
        check: |g| {
            let (a, b) = (tbl(g), tbl(g));
            holds(table_equal(&add(&a, &b), &add(&b, &a)), &[&a, &b])
        },
    },
    Law {
        name: "add-identity",
        law: "t + Φ = t",
        deviation: false,
        check: |g| {
            let a = tbl(g);
            holds(table_equal(&add(&a, &FlowTable::empty()), &a), &[&a])
        },
    },
    Law {
        name: "add-inverse",
        law: "reduce(t + (-t)) = Φ  (non-involutive invertible rules)",
        deviation: false,
        check: |g| {
            let a = g.table(MAX_ENTRIES, ActionMix::NonInvolutive);
            let neg = negate_table(&a).expect("invertible");
            holds(reduce(&add(&a, &neg)).is_empty(), &[&a])
        },
    },
    Law {
        name: "scalar-associative",
        law: "a(b t) = (a b) t",
        deviation: false,
        check: |g| {
            let t = tbl(g);
            for a in Gf2::ALL {
                for b in Gf2::ALL {
                    if !table_equal(&scalar_mul(a, &scalar_mul(b, &t)), &scalar_mul(a * b, &t)) {
                        return Some(format!("a={a:?} b={b:?} {}", show(&[&t])));
                    }
                }
            }
            None
        },
    },
    Law {
        name: "scalar-unit",
        law: "1 t = t",
        deviation: false,
        check: |g| {
            let t = tbl(g);
            holds(table_equal(&scalar_mul(Gf2::One, &t), &t), &[&t])
        },
    },
    Law {
        name: "distributive-tables",
        law: "a(t1 + t2) = a t1 + a t2",
        deviation: false,
        check: |g| {
            let (t1, t2) = (tbl(g), tbl(g));
            for a in Gf2::ALL {
                if !table_equal(&scalar_mul(a, &add(&t1, &t2)), &add(&scalar_mul(a, &t1), &scalar_mul(a, &t2))) {
                    return Some(format!("a={a:?} {}", show(&[&t1, &t2])));
                }
            }
            None
        },
    },
    Law {
        name: "distributive-scalars",
        law: "(a + b) t = a t + b t  for (a,b) != (1,1)",
        deviation: false,
        check: |g| {
            let t = tbl(g);
            for (a, b) in [(Gf2::Zero, Gf2::Zero), (Gf2::Zero, Gf2::One), (Gf2::One, Gf2::Zero)] {
                if !table_equal(&scalar_mul(a + b, &t), &add(&scalar_mul(a, &t), &scalar_mul(b, &t))) {
                    return Some(format!("a={a:?} b={b:?} {}", show(&[&t])));
                }
            }
            None
        },
    },
    Law {
        name: "distributive-scalars-1-1",
        law: "(1 + 1) t = t + t  for t != Φ",
        deviation: true,
        check: |g| {
            let t = g.nonempty_table(MAX_ENTRIES, ActionMix::Any);
            let (one, lhs) = (Gf2::One, scalar_mul(Gf2::One + Gf2::One, &t));
            holds(table_equal(&lhs, &add(&scalar_mul(one, &t), &scalar_mul(one, &t))), &[&t])
        },
    },
    Law {
        name: "add-inverse-involutive",
        law: "reduce(t + (-t)) = Φ  for t of self-inverse rules, t != Φ",
        deviation: true,
        check: |g| {
            let a = g.nonempty_table(MAX_ENTRIES, ActionMix::Involutive);
            let neg = negate_table(&a).expect("invertible");
            holds(reduce(&add(&a, &neg)).is_empty(), &[&a])
        },
    },
];

/// Runs every law on `cases` generated inputs.
pub fn run_axioms(seed: u64, cases: usize) -> AxiomReport {
    let mut results = Vec::new();
    for (i, law) in LAWS.iter().enumerate() {
        // one stream per law, so adding a law leaves the others' cases alone
        let mut g = Gen::new(seed.wrapping_add(i as u64));
        let mut violations = 0;
        let mut first = None;
        for _ in 0..cases {
            if let Some(ce) = (law.check)(&mut g) {
                violations += 1;
                first.get_or_insert(ce);
            }
        }
        let status = match (law.deviation, violations) {
            (false, 0) => Status::Pass,
            (false, _) => Status::Fail,
            (true, v) if v == cases => Status::ExpectedDeviation,
            (true, _) => Status::DeviationNotObserved,
        };
        let first_counterexample = if law.deviation { None } else { first };
        results.push(AxiomResult {
            name: law.name,
            law: law.law,
            deviation: law.deviation,
            cases,
            violations,
            status,
            first_counterexample,
        });
    }
    AxiomReport { seed, cases, results }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cases_is_vacuous() {
        let r = run_axioms(1, 0);
        assert!(r.all_laws_hold());
        assert!(r.results.iter().all(|x| x.violations == 0));
    }

    #[test]
    fn laws_hold_and_deviations_show() {
        let r = run_axioms(42, 100);
        for x in &r.results {
            if x.deviation {
                assert_eq!(x.status, Status::ExpectedDeviation, "{}", x.name);
            } else {
                assert_eq!(x.status, Status::Pass, "{} {:?}", x.name, x.first_counterexample);
            }
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        assert_eq!(run_axioms(9, 30), run_axioms(9, 30));
    }
}
