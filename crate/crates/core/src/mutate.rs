//! Mutant generation: add, remove and replace operators, equivalent mutants
//! built from self-inverse gate runs, balanced sampling and the noiseless
//! equivalence oracle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{emit_qasm, read_qasm_file};
use crate::inputs::TestSuite;
use crate::metrics::{fidelity, trace_distance};
use crate::rng::rng;
use crate::sim::{run_density, DensityMatrix};
use crate::store::{ensure_dir, read_json, write_json, write_text};
use crate::{compose, Circuit, Error, GateKind, GateOp, Result};

/// Default tolerance of the equivalence oracle.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Add,
    Remove,
    Replace,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Add, Operator::Remove, Operator::Replace];
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Add => "add",
            Operator::Remove => "remove",
            Operator::Replace => "replace",
        })
    }
}

/// Quintile of the gate list a mutation lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Beginning,
    PreMiddle,
    Middle,
    PostMiddle,
    End,
}

impl Segment {
    pub const ALL: [Segment; 5] = [
        Segment::Beginning,
        Segment::PreMiddle,
        Segment::Middle,
        Segment::PostMiddle,
        Segment::End,
    ];

    /// `min(4, ⌊5·position / n_gates⌋)`.
    pub fn of(position: usize, n_gates: usize) -> Segment {
        let q = (5 * position).checked_div(n_gates).map_or(4, |q| q.min(4));
        Segment::ALL[q]
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Beginning => "beginning",
            Segment::PreMiddle => "pre_middle",
            Segment::Middle => "middle",
            Segment::PostMiddle => "post_middle",
            Segment::End => "end",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateType {
    SingleQubit,
    MultiQubit,
}

impl GateType {
    pub fn of(kind: GateKind) -> GateType {
        if kind.arity() <= 1 {
            GateType::SingleQubit
        } else {
            GateType::MultiQubit
        }
    }
}

impl fmt::Display for GateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateType::SingleQubit => "single_qubit",
            GateType::MultiQubit => "multi_qubit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub operator: Operator,
    /// Gate ordinal in the CUT (barriers not counted). Add inserts before it;
    /// an ordinal equal to the gate count appends.
    pub position: usize,
    pub new_gate: Option<GateOp>,
    pub segment: Segment,
    /// Kind of the removed, replacing or inserted gate.
    pub gate_kind: GateKind,
    pub gate_type: GateType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Equivalent,
    NonEquivalent,
    Unlabeled,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Equivalent => "equivalent",
            Label::NonEquivalent => "non_equivalent",
            Label::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutant {
    pub id: String,
    pub cut_name: String,
    pub circuit: Circuit,
    pub mutation: Mutation,
    pub label: Label,
}

/// Knobs for [`enumerate_mutants`].
#[derive(Debug, Clone)]
pub struct EnumerateOptions {
    pub operators: BTreeSet<Operator>,
    /// Gate kinds that may be inserted or substituted.
    pub alphabet: Vec<GateKind>,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        Self {
            operators: Operator::ALL.into_iter().collect(),
            alphabet: default_alphabet(),
        }
    }
}

/// Every unitary kind except the identity.
pub fn default_alphabet() -> Vec<GateKind> {
    GateKind::unitary_kinds()
        .filter(|k| *k != GateKind::Id)
        .collect()
}

fn ordinal_width(n_gates: usize) -> usize {
    n_gates.to_string().len().max(2)
}

fn mutated(cut: &Circuit, id: &str, ops: Vec<GateOp>) -> Circuit {
    Circuit {
        name: id.to_string(),
        n_qubits: cut.n_qubits,
        ops,
        measured: cut.measured,
    }
}

/// All first-order mutants of `cut`, sorted by id.
pub fn enumerate_mutants(cut: &Circuit, opts: &EnumerateOptions, seed: u64) -> Result<Vec<Mutant>> {
    let positions = cut.gate_positions();
    let n_gates = positions.len();
    if n_gates == 0 {
        return Err(Error::InvalidCircuit(format!(
            "`{}` has no gates to mutate",
            cut.name
        )));
    }
    let w = ordinal_width(n_gates);
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (ordinal, &op_idx) in positions.iter().enumerate() {
        let op = &cut.ops[op_idx];
        let segment = Segment::of(ordinal, n_gates);
        let make = |operator, kind: GateKind, new_gate: Option<GateOp>, id: String, ops| Mutant {
            circuit: mutated(cut, &id, ops),
            id,
            cut_name: cut.name.clone(),
            mutation: Mutation {
                operator,
                position: ordinal,
                new_gate,
                segment,
                gate_kind: kind,
                gate_type: GateType::of(kind),
            },
            label: Label::Unlabeled,
        };
        if opts.operators.contains(&Operator::Remove) {
            let mut ops = cut.ops.clone();
            ops.remove(op_idx);
            let id = format!("{}-rem{ordinal:0w$}", cut.name);
            out.push(make(Operator::Remove, op.kind, None, id, ops));
        }
        if opts.operators.contains(&Operator::Replace) {
            for &kind in &opts.alphabet {
                if kind == op.kind
                    || kind.arity() != op.kind.arity()
                    || kind.param_count() != op.kind.param_count()
                {
                    continue;
                }
                let new = GateOp {
                    kind,
                    qubits: op.qubits.clone(),
                    params: op.params.clone(),
                };
                let mut ops = cut.ops.clone();
                ops[op_idx] = new.clone();
                let id = format!("{}-rep{ordinal:0w$}-{}", cut.name, kind.name());
                out.push(make(Operator::Replace, kind, Some(new), id, ops));
            }
        }
        if opts.operators.contains(&Operator::Add) {
            for &kind in &opts.alphabet {
                if kind.arity() != op.kind.arity() {
                    continue;
                }
                let params: Vec<f64> = (0..kind.param_count())
                    .map(|_| r.random_range(0.0..TAU))
                    .collect();
                let new = GateOp {
                    kind,
                    qubits: op.qubits.clone(),
                    params,
                };
                let mut ops = cut.ops.clone();
                ops.insert(op_idx, new.clone());
                let id = format!("{}-add{ordinal:0w$}-{}", cut.name, kind.name());
                out.push(make(Operator::Add, kind, Some(new), id, ops));
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

const SELF_INVERSE: [GateKind; 11] = [
    GateKind::X,
    GateKind::Y,
    GateKind::Z,
    GateKind::H,
    GateKind::S,
    GateKind::Sdg,
    GateKind::T,
    GateKind::Tdg,
    GateKind::Cx,
    GateKind::Cz,
    GateKind::Swap,
];

/// Equivalent mutants: `m` adjacent copies of a gate `G` with `Gᵐ = I`
/// inserted at a seeded position on seeded qubits.
pub fn gen_equivalent(cut: &Circuit, count: usize, seed: u64) -> Result<Vec<Mutant>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "equivalent mutant count must be ≥ 1".into(),
        ));
    }
    let positions = cut.gate_positions();
    let n_gates = positions.len();
    let kinds: Vec<GateKind> = SELF_INVERSE
        .into_iter()
        .filter(|k| k.arity() <= cut.n_qubits)
        .collect();
    let width = (count - 1).to_string().len().max(2);
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let kind = kinds[r.random_range(0..kinds.len())];
        let reps = kind.self_inverse_period().expect("self-inverse kind");
        let mut qubits: Vec<usize> = (0..cut.n_qubits).collect();
        qubits.shuffle(&mut r);
        qubits.truncate(kind.arity());
        let ordinal = r.random_range(0..=n_gates);
        let op_idx = positions.get(ordinal).copied().unwrap_or(cut.ops.len());
        let gate = GateOp {
            kind,
            qubits,
            params: Vec::new(),
        };
        let mut ops = cut.ops.clone();
        ops.splice(op_idx..op_idx, std::iter::repeat_n(gate.clone(), reps));
        let id = format!("{}-eq{i:0width$}", cut.name);
        out.push(Mutant {
            circuit: mutated(cut, &id, ops),
            id,
            cut_name: cut.name.clone(),
            mutation: Mutation {
                operator: Operator::Add,
                position: ordinal,
                new_gate: Some(gate),
                segment: Segment::of(ordinal, n_gates),
                gate_kind: kind,
                gate_type: GateType::of(kind),
            },
            label: Label::Equivalent,
        });
    }
    Ok(out)
}

/// Noiseless final states of `c` behind every suite input.
pub fn suite_states(c: &Circuit, suite: &TestSuite) -> Result<Vec<DensityMatrix>> {
    if c.n_qubits != suite.n_qubits {
        return Err(Error::QubitMismatch {
            left: c.n_qubits,
            right: suite.n_qubits,
        });
    }
    suite
        .inputs
        .iter()
        .map(|input| run_density(&compose(&input.prep, c)?, None))
        .collect()
}

fn states_match(a: &[DensityMatrix], b: &[DensityMatrix], tol: f64) -> Result<bool> {
    for (x, y) in a.iter().zip(b) {
        if trace_distance(x, y)? >= tol || 1.0 - fidelity(x, y)? >= tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Noiseless equivalence on every suite input; also records the verdict on `m`.
pub fn is_equivalent(cut: &Circuit, m: &mut Mutant, suite: &TestSuite, tol: f64) -> Result<bool> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument(
            "equivalence needs a non-empty suite".into(),
        ));
    }
    let reference = suite_states(cut, suite)?;
    let verdict = states_match(&reference, &suite_states(&m.circuit, suite)?, tol)?;
    m.label = if verdict {
        Label::Equivalent
    } else {
        Label::NonEquivalent
    };
    Ok(verdict)
}

/// Runs the oracle over many mutants of one CUT in parallel.
pub fn label_all(cut: &Circuit, mutants: &mut [Mutant], suite: &TestSuite, tol: f64) -> Result<()> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument(
            "equivalence needs a non-empty suite".into(),
        ));
    }
    let reference = suite_states(cut, suite)?;
    mutants.par_iter_mut().try_for_each(|m| {
        let same = states_match(&reference, &suite_states(&m.circuit, suite)?, tol)?;
        m.label = if same {
            Label::Equivalent
        } else {
            Label::NonEquivalent
        };
        Ok(())
    })
}

/// Stratified sample of `quota` mutants.
///
/// Operators are visited round-robin and, within each operator, position
/// segments rotate, so operator counts differ by at most one whenever the pool
/// allows. Picks prefer gate kinds not yet sampled, and a final repair pass
/// swaps in any kind still missing. The result is sorted by id.
pub fn sample_balanced(pool: &[Mutant], quota: usize, seed: u64) -> Result<Vec<Mutant>> {
    if quota > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "quota {quota} exceeds pool of {}",
            pool.len()
        )));
    }
    let mut sorted: Vec<&Mutant> = pool.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if quota == pool.len() {
        return Ok(sorted.into_iter().cloned().collect());
    }
    let mut r = rng(seed);
    // operator → segment → shuffled queue
    let mut cells: BTreeMap<Operator, BTreeMap<Segment, Vec<&Mutant>>> = BTreeMap::new();
    for m in &sorted {
        cells
            .entry(m.mutation.operator)
            .or_default()
            .entry(m.mutation.segment)
            .or_default()
            .push(m);
    }
    let mut operators: Vec<Operator> = cells.keys().copied().collect();
    operators.shuffle(&mut r);
    let mut seg_order: HashMap<Operator, Vec<Segment>> = HashMap::new();
    for (op, segs) in cells.iter_mut() {
        let mut order: Vec<Segment> = segs.keys().copied().collect();
        order.shuffle(&mut r);
        seg_order.insert(*op, order);
        for queue in segs.values_mut() {
            queue.shuffle(&mut r);
        }
    }
    let mut seg_cursor: HashMap<Operator, usize> = HashMap::new();
    let mut covered: BTreeSet<GateKind> = BTreeSet::new();
    let mut chosen: Vec<&Mutant> = Vec::with_capacity(quota);
    while chosen.len() < quota {
        for op in &operators {
            if chosen.len() == quota {
                break;
            }
            let order = &seg_order[op];
            let segs = cells.get_mut(op).expect("operator present");
            let cursor = seg_cursor.entry(*op).or_insert(0);
            for _ in 0..order.len() {
                let seg = order[*cursor % order.len()];
                *cursor += 1;
                let queue = segs.get_mut(&seg).expect("segment present");
                if queue.is_empty() {
                    continue;
                }
                let pick = queue
                    .iter()
                    .position(|m| !covered.contains(&m.mutation.gate_kind))
                    .unwrap_or(0);
                let m = queue.remove(pick);
                covered.insert(m.mutation.gate_kind);
                chosen.push(m);
                break;
            }
        }
    }
    repair_kind_coverage(&sorted, &mut chosen);
    let mut out: Vec<Mutant> = chosen.into_iter().cloned().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn repair_kind_coverage<'a>(pool: &[&'a Mutant], chosen: &mut [&'a Mutant]) {
    let all_kinds: BTreeSet<GateKind> = pool.iter().map(|m| m.mutation.gate_kind).collect();
    if chosen.len() < all_kinds.len() {
        return;
    }
    loop {
        let mut counts: BTreeMap<GateKind, usize> = BTreeMap::new();
        for m in chosen.iter() {
            *counts.entry(m.mutation.gate_kind).or_default() += 1;
        }
        let Some(missing) = all_kinds.iter().find(|k| !counts.contains_key(k)) else {
            return;
        };
        let candidates: Vec<&&Mutant> = pool
            .iter()
            .filter(|m| m.mutation.gate_kind == *missing)
            .collect();
        let replaceable = |slot: &&Mutant, op: Option<Operator>| {
            counts[&slot.mutation.gate_kind] > 1 && op.is_none_or(|o| slot.mutation.operator == o)
        };
        // same-operator swaps keep the operator balance intact
        let swap = candidates
            .iter()
            .find_map(|cand| {
                chosen
                    .iter()
                    .position(|s| replaceable(s, Some(cand.mutation.operator)))
                    .map(|i| (i, **cand))
            })
            .or_else(|| {
                // otherwise take from the operator that has the most slots
                let mut per_op: BTreeMap<Operator, usize> = BTreeMap::new();
                for m in chosen.iter() {
                    *per_op.entry(m.mutation.operator).or_default() += 1;
                }
                chosen
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| replaceable(s, None))
                    .max_by_key(|(i, s)| (per_op[&s.mutation.operator], std::cmp::Reverse(*i)))
                    .map(|(i, _)| (i, *candidates[0]))
            });
        match swap {
            Some((i, cand)) => chosen[i] = cand,
            None => return,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub cut: String,
    pub operator: Operator,
    pub position: usize,
    pub segment: Segment,
    pub gate_kind: GateKind,
    pub gate_type: GateType,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_gate: Option<GateOp>,
}

impl ManifestEntry {
    pub fn of(m: &Mutant) -> Self {
        Self {
            id: m.id.clone(),
            cut: m.cut_name.clone(),
            operator: m.mutation.operator,
            position: m.mutation.position,
            segment: m.mutation.segment,
            gate_kind: m.mutation.gate_kind,
            gate_type: m.mutation.gate_type,
            label: m.label,
            new_gate: m.mutation.new_gate.clone(),
        }
    }
}

/// Writes `<id>.qasm` per mutant and a `manifest.json` sidecar.
pub fn save_mutants(dir: &Path, mutants: &[Mutant]) -> Result<()> {
    ensure_dir(dir)?;
    for m in mutants {
        write_text(&dir.join(format!("{}.qasm", m.id)), &emit_qasm(&m.circuit))?;
    }
    let manifest: Vec<ManifestEntry> = mutants.iter().map(ManifestEntry::of).collect();
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_mutants(dir: &Path) -> Result<Vec<Mutant>> {
    let manifest: Vec<ManifestEntry> = read_json(&dir.join("manifest.json"))?;
    manifest
        .into_iter()
        .map(|e| {
            let mut circuit = read_qasm_file(&dir.join(format!("{}.qasm", e.id)))?;
            circuit.name = e.id.clone();
            Ok(Mutant {
                id: e.id,
                cut_name: e.cut,
                circuit,
                mutation: Mutation {
                    operator: e.operator,
                    position: e.position,
                    new_gate: e.new_gate,
                    segment: e.segment,
                    gate_kind: e.gate_kind,
                    gate_type: e.gate_type,
                },
                label: e.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::build_suite;
    use crate::parse_qasm;

    fn bell() -> Circuit {
        parse_qasm(
            "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[2];\ncreg c[2];\nh q[0];\ncx q[0],q[1];\nmeasure q -> c;\n",
            "bell",
        )
        .unwrap()
    }

    fn only(ops: &[Operator]) -> EnumerateOptions {
        EnumerateOptions {
            operators: ops.iter().copied().collect(),
            ..Default::default()
        }
    }

    #[test]
    fn remove_only_on_single_gate() {
        let mut c = Circuit::new("one", 1);
        c.push(GateKind::H, &[0], &[]).unwrap();
        let ms = enumerate_mutants(&c, &only(&[Operator::Remove]), 0).unwrap();
        assert_eq!(ms.len(), 1);
        assert!(ms[0].circuit.ops.is_empty());
        assert!(ms[0].mutation.new_gate.is_none());
    }

    #[test]
    fn replace_within_restricted_alphabet() {
        let mut c = Circuit::new("one", 1);
        c.push(GateKind::H, &[0], &[]).unwrap();
        let opts = EnumerateOptions {
            operators: [Operator::Replace].into_iter().collect(),
            alphabet: vec![GateKind::X, GateKind::H],
        };
        let ms = enumerate_mutants(&c, &opts, 0).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].circuit.ops[0].kind, GateKind::X);
    }

    #[test]
    fn bell_count_matches_brute_force() {
        let c = bell();
        let ms = enumerate_mutants(&c, &EnumerateOptions::default(), 1).unwrap();
        // independent count: loop over every (position, kind) pair
        let alphabet = default_alphabet();
        let mut expected = 0;
        for op in &c.ops {
            expected += 1;
            for k in &alphabet {
                if *k != op.kind
                    && k.arity() == op.kind.arity()
                    && k.param_count() == op.kind.param_count()
                {
                    expected += 1;
                }
                if k.arity() == op.kind.arity() {
                    expected += 1;
                }
            }
        }
        assert_eq!(ms.len(), expected);
        let ids: BTreeSet<_> = ms.iter().map(|m| &m.id).collect();
        assert_eq!(ids.len(), ms.len());
        for m in &ms {
            assert_ne!(m.circuit.ops, c.ops);
            m.circuit.validate().unwrap();
            let n = m.circuit.n_gates();
            match m.mutation.operator {
                Operator::Remove => assert_eq!(n, 1),
                Operator::Add => assert_eq!(n, 3),
                Operator::Replace => assert_eq!(n, 2),
            }
            assert_eq!(m.label, Label::Unlabeled);
        }
        assert_eq!(
            ms,
            enumerate_mutants(&c, &EnumerateOptions::default(), 1).unwrap()
        );
    }

    #[test]
    fn segments_are_quintiles() {
        let segs: Vec<_> = (0..10).map(|p| Segment::of(p, 10)).collect();
        use Segment::*;
        assert_eq!(
            segs,
            [
                Beginning, Beginning, PreMiddle, PreMiddle, Middle, Middle, PostMiddle, PostMiddle,
                End, End
            ]
        );
        assert_eq!(Segment::of(0, 1), Beginning);
        assert_eq!(Segment::of(3, 3), End);
    }

    #[test]
    fn oracle_examples() {
        let mut h = Circuit::new("h", 1);
        h.push(GateKind::H, &[0], &[]).unwrap();
        let suite = build_suite(1, 0).unwrap();
        let mk = |c: Circuit| Mutant {
            id: "m".into(),
            cut_name: "h".into(),
            circuit: c,
            mutation: Mutation {
                operator: Operator::Replace,
                position: 0,
                new_gate: None,
                segment: Segment::Beginning,
                gate_kind: GateKind::X,
                gate_type: GateType::SingleQubit,
            },
            label: Label::Unlabeled,
        };
        let mut same = mk(h.clone());
        assert!(is_equivalent(&h, &mut same, &suite, EQUIVALENCE_TOL).unwrap());
        assert_eq!(same.label, Label::Equivalent);

        let mut x = Circuit::new("x", 1);
        x.push(GateKind::X, &[0], &[]).unwrap();
        let mut m = mk(x.clone());
        assert!(!is_equivalent(&h, &mut m, &suite, EQUIVALENCE_TOL).unwrap());
        assert_eq!(m.label, Label::NonEquivalent);
        let zero = run_density(&h, None).unwrap();
        let one = run_density(&x, None).unwrap();
        assert!(
            (trace_distance(&zero, &one).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12
        );

        let mut zz = h.clone();
        zz.push(GateKind::Z, &[0], &[]).unwrap();
        zz.push(GateKind::Z, &[0], &[]).unwrap();
        assert!(is_equivalent(&h, &mut mk(zz), &suite, EQUIVALENCE_TOL).unwrap());
        let mut s4 = h.clone();
        for _ in 0..4 {
            s4.push(GateKind::S, &[0], &[]).unwrap();
        }
        assert!(is_equivalent(&h, &mut mk(s4), &suite, EQUIVALENCE_TOL).unwrap());
    }

    #[test]
    fn generated_equivalents_pass_the_oracle() {
        let c = bell();
        let suite = build_suite(2, 3).unwrap();
        let mut eq = gen_equivalent(&c, 50, 11).unwrap();
        assert_eq!(eq.len(), 50);
        for m in &eq {
            let reps = m.mutation.gate_kind.self_inverse_period().unwrap();
            assert_eq!(m.circuit.n_gates(), c.n_gates() + reps);
        }
        label_all(&c, &mut eq, &suite, EQUIVALENCE_TOL).unwrap();
        assert!(eq.iter().all(|m| m.label == Label::Equivalent));

        let mut one = Circuit::new("h", 1);
        one.push(GateKind::H, &[0], &[]).unwrap();
        let eq1 = gen_equivalent(&one, 20, 2).unwrap();
        assert!(eq1
            .iter()
            .all(|m| m.mutation.gate_type == GateType::SingleQubit));
    }

    fn pool() -> Vec<Mutant> {
        let mut c = Circuit::new("p", 3);
        for q in 0..3 {
            c.push(GateKind::H, &[q], &[]).unwrap();
            c.push(GateKind::Rz, &[q], &[0.3]).unwrap();
        }
        c.push(GateKind::Cx, &[0, 1], &[]).unwrap();
        c.push(GateKind::Swap, &[1, 2], &[]).unwrap();
        c.push(GateKind::Ccx, &[0, 1, 2], &[]).unwrap();
        c.push(GateKind::T, &[2], &[]).unwrap();
        enumerate_mutants(&c, &EnumerateOptions::default(), 4).unwrap()
    }

    #[test]
    fn balanced_sampling_properties() {
        let pool = pool();
        let kinds: BTreeSet<_> = pool.iter().map(|m| m.mutation.gate_kind).collect();
        for quota in [1, 3, 10, kinds.len(), 40, 100] {
            let s = sample_balanced(&pool, quota, 9).unwrap();
            assert_eq!(s.len(), quota);
            assert_eq!(s, sample_balanced(&pool, quota, 9).unwrap());
            let ids: BTreeSet<_> = s.iter().map(|m| &m.id).collect();
            assert_eq!(ids.len(), quota);
            let mut per_op: BTreeMap<Operator, usize> = BTreeMap::new();
            for m in &s {
                *per_op.entry(m.mutation.operator).or_default() += 1;
            }
            // operators that still had unsampled mutants differ by at most one
            let hi = *per_op.values().max().unwrap();
            for op in Operator::ALL {
                let got = per_op.get(&op).copied().unwrap_or(0);
                let avail = pool.iter().filter(|m| m.mutation.operator == op).count();
                if quota < kinds.len() {
                    assert!(got == avail || got + 1 >= hi, "quota {quota}: {per_op:?}");
                }
            }
            if quota >= kinds.len() {
                let got: BTreeSet<_> = s.iter().map(|m| m.mutation.gate_kind).collect();
                assert_eq!(got, kinds, "quota {quota}");
            }
            assert_eq!(sample_balanced(&s, quota, 9).unwrap(), s);
        }
        assert_eq!(
            sample_balanced(&pool, pool.len(), 1).unwrap().len(),
            pool.len()
        );
        assert!(sample_balanced(&pool, pool.len() + 1, 1).is_err());
    }

    #[test]
    fn perfect_stratification() {
        // 10 mutants in each of 5 cells → quota 5 takes one per cell
        let base = pool();
        let template = base
            .iter()
            .find(|m| m.mutation.operator == Operator::Remove)
            .unwrap();
        let mut uniform = Vec::new();
        for (s, seg) in Segment::ALL.iter().enumerate() {
            for i in 0..10 {
                let mut m = template.clone();
                m.id = format!("u{s}-{i}");
                m.mutation.segment = *seg;
                uniform.push(m);
            }
        }
        let picked = sample_balanced(&uniform, 5, 3).unwrap();
        let segs: BTreeSet<_> = picked.iter().map(|m| m.mutation.segment).collect();
        assert_eq!(segs.len(), 5);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ms = enumerate_mutants(&bell(), &EnumerateOptions::default(), 2).unwrap();
        ms.truncate(12);
        save_mutants(dir.path(), &ms).unwrap();
        assert_eq!(load_mutants(dir.path()).unwrap(), ms);
    }
}
