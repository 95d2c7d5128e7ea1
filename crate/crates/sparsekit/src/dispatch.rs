//! Operator dispatch: a registry keyed by operator name and sparsity
//! layouts, the output-format sparsification pipeline, lossless-conversion
//! rewrites, and a dense fallback that always works for the built-in
//! operators (with a warning).
//!
//! Resolution order is fixed: exact key, then single lossless conversions
//! of individual inputs (never to dense), then the dense fallback. Whatever
//! path is taken, the decoded output equals the dense operator applied to
//! the decoded inputs, followed by the output format's sparsifiers.

use crate::error::{Error, Result};
use crate::kernels::{csr_spmm, dense_gemm_tiled, nmg_spmm, GemmTiling};
use crate::matrix::{
    CooMatrix, CsrMatrix, DenseMatrix, LayoutKind, LayoutTag, MaskedMatrix, Matrix,
};
use crate::nmg::{self, NmgFormat};
use crate::scalar::Scalar;
use crate::sparsify::{self, SparsifierKind, SparsifierSpec};
use serde::Serialize;
use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

// ---------------------------------------------------------------------------
// Output formats and keys
// ---------------------------------------------------------------------------

/// The sparsification quadruple attached to one operator output: an inline
/// sparsifier, the temporary layout the implementation produces, an
/// external sparsifier, and the final output layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFormat {
    pub inline: SparsifierSpec,
    pub tmp_layout: LayoutTag,
    pub external: SparsifierSpec,
    pub out_layout: LayoutTag,
}

impl OutputFormat {
    /// The neutral format: keep-all into a dense tensor.
    pub fn dense() -> Self {
        OutputFormat {
            inline: SparsifierSpec::KeepAll,
            tmp_layout: LayoutTag::Dense,
            external: SparsifierSpec::KeepAll,
            out_layout: LayoutTag::Dense,
        }
    }

    /// Keep-all pipeline: the implementation produces `out_layout` directly.
    pub fn keep_all_into(out_layout: LayoutTag) -> Self {
        OutputFormat {
            inline: SparsifierSpec::KeepAll,
            tmp_layout: out_layout,
            external: SparsifierSpec::KeepAll,
            out_layout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inline.validate()?;
        self.external.validate()?;
        self.tmp_layout.validate()?;
        self.out_layout.validate()
    }
}

/// Canonical dispatch key.
///
/// Canonicalization keeps the full input layout tags (format parameters
/// included) and reduces each output format to its temporary layout: the
/// registered implementation must produce the tmp-layout value, while the
/// engine applies inline and external sparsifiers post-hoc, so sparsifier
/// parameters never influence which implementation is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperatorKey {
    op: String,
    input_layouts: Vec<LayoutTag>,
    output_tmp_layouts: Vec<LayoutTag>,
}

impl OperatorKey {
    pub fn new(op: &str, inputs: &[LayoutTag], out_formats: &[OutputFormat]) -> Self {
        OperatorKey {
            op: op.to_string(),
            input_layouts: inputs.to_vec(),
            output_tmp_layouts: out_formats.iter().map(|f| f.tmp_layout).collect(),
        }
    }

    pub fn from_tags(op: &str, inputs: &[LayoutTag], output_tmp: &[LayoutTag]) -> Self {
        OperatorKey {
            op: op.to_string(),
            input_layouts: inputs.to_vec(),
            output_tmp_layouts: output_tmp.to_vec(),
        }
    }

    pub fn op(&self) -> &str {
        &self.op
    }

    pub fn input_layouts(&self) -> &[LayoutTag] {
        &self.input_layouts
    }
}

/// Key for backward implementations: backward lookup depends on the
/// forward input layouts only; input gradients are produced dense and the
/// consumer applies its gradient output formats.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BackwardKey {
    op: String,
    input_layouts: Vec<LayoutTag>,
}

impl BackwardKey {
    pub fn new(op: &str, inputs: &[LayoutTag]) -> Self {
        BackwardKey {
            op: op.to_string(),
            input_layouts: inputs.to_vec(),
        }
    }
}

// ---------------------------------------------------------------------------
// Results and warnings
// ---------------------------------------------------------------------------

/// Which resolution path `execute` took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathOutcome {
    /// The canonical key had a registered implementation.
    Exact,
    /// Inputs were rewritten by lossless conversions (input index, from, to).
    ViaConversion(Vec<(usize, LayoutTag, LayoutTag)>),
    /// All inputs were decoded to masked dense and the dense implementation
    /// ran. Always accompanied by a warning record.
    DenseFallback,
}

/// One warning, serializable as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarningRecord {
    pub op: String,
    pub input_layouts: Vec<String>,
    pub path: String,
    pub message: String,
}

impl WarningRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("warning record serializes")
    }
}

/// Outputs of one dispatched call plus the path taken and any warnings
/// emitted during the call.
#[derive(Debug)]
pub struct DispatchResult<T: Scalar> {
    pub outcome: PathOutcome,
    pub outputs: Vec<Matrix<T>>,
    pub warnings: Vec<WarningRecord>,
}

// ---------------------------------------------------------------------------
// Lossless conversion
// ---------------------------------------------------------------------------

/// Converts between layouts when and only when the dense decoding is
/// preserved exactly. The lossless table:
/// any -> dense; dense/masked -> csr/coo; csr <-> coo; grouped -> masked.
/// Dense -> grouped is information-destroying and always refused.
pub fn convert_lossless<T: Scalar>(x: &Matrix<T>, target: LayoutTag) -> Result<Matrix<T>> {
    let from = x.layout_tag();
    let refuse = || Error::ConversionRefused {
        from: from.to_string(),
        to: target.to_string(),
    };
    match (x, target.kind()) {
        (_, LayoutKind::Dense) => Ok(Matrix::Dense(x.to_dense())),
        (Matrix::Dense(d), LayoutKind::Csr) => Ok(Matrix::Csr(CsrMatrix::from_dense(d))),
        (Matrix::Dense(d), LayoutKind::Coo) => Ok(Matrix::Coo(CooMatrix::from_dense(d))),
        (Matrix::Masked(mm), LayoutKind::Csr) => Ok(Matrix::Csr(
            CsrMatrix::from_dense_with_support(mm.dense(), mm.mask())?,
        )),
        (Matrix::Masked(mm), LayoutKind::Coo) => {
            let csr = CsrMatrix::from_dense_with_support(mm.dense(), mm.mask())?;
            Ok(Matrix::Coo(csr.to_coo()))
        }
        (Matrix::Csr(c), LayoutKind::Coo) => Ok(Matrix::Coo(c.to_coo())),
        (Matrix::Coo(c), LayoutKind::Csr) => Ok(Matrix::Csr(c.to_csr())),
        (Matrix::GroupedNm(gm), LayoutKind::Masked) => Ok(Matrix::Masked(MaskedMatrix::new(
            gm.to_dense(),
            gm.support_mask(),
        )?)),
        _ => Err(refuse()),
    }
}

/// Non-dense conversion targets tried by the dispatch rewrite search.
/// Dense is deliberately absent: decoding everything to dense is the
/// fallback path, not a rewrite.
fn rewrite_targets(from: LayoutKind) -> &'static [LayoutTag] {
    match from {
        LayoutKind::Dense | LayoutKind::Masked => &[LayoutTag::Csr, LayoutTag::Coo],
        LayoutKind::Csr => &[LayoutTag::Coo],
        LayoutKind::Coo => &[LayoutTag::Csr],
        LayoutKind::GroupedNm => &[LayoutTag::Masked],
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Forward implementation: raw operator on the given inputs, producing one
/// value per output format in that format's tmp layout. Sparsifiers are
/// applied by the engine afterwards.
pub type OpImpl<T> =
    Arc<dyn Fn(&[Matrix<T>], &[OutputFormat]) -> Result<Vec<Matrix<T>>> + Send + Sync>;

/// Backward implementation: given the forward inputs and the dense output
/// gradient, produce one dense gradient per input.
pub type BwdImpl<T> =
    Arc<dyn Fn(&[Matrix<T>], &DenseMatrix<T>) -> Result<Vec<DenseMatrix<T>>> + Send + Sync>;

/// Sparsifier implementation: apply `spec` to `x`, producing `out_layout`.
/// `reference` carries the original tensor for SameFormat.
pub type SparsifierImpl<T> = Arc<
    dyn Fn(&SparsifierSpec, &Matrix<T>, LayoutTag, Option<&Matrix<T>>) -> Result<Matrix<T>>
        + Send
        + Sync,
>;

/// The dispatch registry. Built single-threaded during setup, then
/// read-only; the warning log is an append-only concurrent-safe sink.
pub struct Registry<T: Scalar> {
    fwd: HashMap<OperatorKey, OpImpl<T>>,
    bwd: HashMap<BackwardKey, BwdImpl<T>>,
    sparsifiers: HashMap<(SparsifierKind, LayoutKind, LayoutKind), SparsifierImpl<T>>,
    known_ops: HashSet<String>,
    force_dense: HashSet<String>,
    warnings: Mutex<Vec<WarningRecord>>,
    tiling: GemmTiling,
}

impl<T: Scalar> Registry<T> {
    /// An empty registry: no operators, no sparsifier routes.
    pub fn empty() -> Self {
        Registry {
            fwd: HashMap::new(),
            bwd: HashMap::new(),
            sparsifiers: HashMap::new(),
            known_ops: HashSet::new(),
            force_dense: HashSet::new(),
            warnings: Mutex::new(Vec::new()),
            tiling: GemmTiling::default(),
        }
    }

    /// Registry with the built-in operators (add, matmul, linear, relu)
    /// over dense/masked/csr/coo layouts, plus generic sparsifier routes.
    /// Grouped-layout operator implementations are parameterized, so they
    /// are registered per format instance; see [`Registry::register_nmg_ops`].
    pub fn with_builtins(tiling: GemmTiling) -> Self {
        let mut r = Registry::empty();
        r.tiling = tiling;
        builtins::register_all(&mut r);
        r
    }

    pub fn tiling(&self) -> GemmTiling {
        self.tiling
    }

    /// Registers (or replaces, with a warning) a forward implementation.
    pub fn register_fwd(&mut self, key: OperatorKey, imp: OpImpl<T>) {
        self.known_ops.insert(key.op.clone());
        if self.fwd.insert(key.clone(), imp).is_some() {
            self.warn(
                &key.op,
                &key.input_layouts,
                "duplicate_registration",
                "forward implementation replaced by a later registration",
            );
        }
    }

    /// Registers (or replaces, with a warning) a backward implementation.
    pub fn register_bwd(&mut self, key: BackwardKey, imp: BwdImpl<T>) {
        self.known_ops.insert(key.op.clone());
        if self.bwd.insert(key.clone(), imp).is_some() {
            self.warn(
                &key.op,
                &key.input_layouts,
                "duplicate_registration",
                "backward implementation replaced by a later registration",
            );
        }
    }

    /// Registers a sparsifier implementation for a (kind, input layout,
    /// output layout) triple.
    pub fn register_sparsifier(
        &mut self,
        kind: SparsifierKind,
        in_layout: LayoutKind,
        out_layout: LayoutKind,
        imp: SparsifierImpl<T>,
    ) {
        self.sparsifiers.insert((kind, in_layout, out_layout), imp);
    }

    /// Registers matmul/linear forward and backward implementations for one
    /// grouped n:m format instance (parameters are part of the key).
    pub fn register_nmg_ops(&mut self, fmt: NmgFormat) {
        builtins::register_nmg(self, fmt);
    }

    /// Forces every call of `op` down the dense fallback path.
    pub fn set_force_dense(&mut self, op: &str, on: bool) {
        if on {
            self.force_dense.insert(op.to_string());
        } else {
            self.force_dense.remove(op);
        }
    }

    pub fn has_fwd(&self, key: &OperatorKey) -> bool {
        self.fwd.contains_key(key)
    }

    pub fn has_sparsifier(
        &self,
        kind: SparsifierKind,
        in_layout: LayoutKind,
        out_layout: LayoutKind,
    ) -> bool {
        self.sparsifiers.contains_key(&(kind, in_layout, out_layout))
    }

    /// Snapshot of every warning recorded so far.
    pub fn warnings(&self) -> Vec<WarningRecord> {
        self.warnings.lock().unwrap().clone()
    }

    /// Warnings serialized as JSON lines.
    pub fn warnings_json(&self) -> String {
        self.warnings()
            .iter()
            .map(WarningRecord::to_json_line)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Human-readable listing of all registered keys, sorted.
    pub fn dump(&self) -> String {
        let fmt_tags = |tags: &[LayoutTag]| {
            tags.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
        };
        let mut lines: Vec<String> = self
            .fwd
            .keys()
            .map(|k| {
                format!(
                    "fwd {} [{}] -> [{}]",
                    k.op,
                    fmt_tags(&k.input_layouts),
                    fmt_tags(&k.output_tmp_layouts)
                )
            })
            .collect();
        lines.extend(
            self.bwd
                .keys()
                .map(|k| format!("bwd {} [{}]", k.op, fmt_tags(&k.input_layouts))),
        );
        lines.extend(self.sparsifiers.keys().map(|(kind, inp, out)| {
            format!("sparsifier {kind:?} {inp:?} -> {out:?}")
        }));
        lines.sort();
        lines.join("\n")
    }

    fn warn(&self, op: &str, inputs: &[LayoutTag], path: &str, message: &str) -> WarningRecord {
        let record = WarningRecord {
            op: op.to_string(),
            input_layouts: inputs.iter().map(|t| t.to_string()).collect(),
            path: path.to_string(),
            message: message.to_string(),
        };
        self.warnings.lock().unwrap().push(record.clone());
        record
    }

    // -----------------------------------------------------------------
    // Sparsifier routing
    // -----------------------------------------------------------------

    /// Applies a sparsifier through the registered routes, falling back to
    /// the dense route (decode, apply, re-lay-out) with a warning if the
    /// triple has no registration.
    pub fn apply_sparsifier(
        &self,
        spec: &SparsifierSpec,
        x: &Matrix<T>,
        out_layout: LayoutTag,
        reference: Option<&Matrix<T>>,
    ) -> Result<Matrix<T>> {
        let triple = (spec.kind(), x.layout_tag().kind(), out_layout.kind());
        if let Some(imp) = self.sparsifiers.get(&triple) {
            return imp(spec, x, out_layout, reference);
        }
        self.warn(
            "sparsify",
            &[x.layout_tag()],
            "dense_fallback",
            &format!(
                "no sparsifier implementation for ({:?}, {:?}, {:?}); dense route",
                triple.0, triple.1, triple.2
            ),
        );
        universal_sparsify(spec, x, out_layout, reference)
    }

    // -----------------------------------------------------------------
    // Execute
    // -----------------------------------------------------------------

    /// Dispatches `op` on `inputs`, producing one output per format.
    ///
    /// Pipeline per output: the resolved implementation produces the
    /// tmp-layout value, the inline sparsifier is applied, then the
    /// external sparsifier lays the result out in the output layout.
    pub fn execute(
        &self,
        op: &str,
        inputs: &[Matrix<T>],
        out_formats: &[OutputFormat],
    ) -> Result<DispatchResult<T>> {
        for f in out_formats {
            f.validate()?;
        }
        if !self.known_ops.contains(op) {
            return Err(Error::NoImplementation(format!("unknown operator {op}")));
        }
        let tags: Vec<LayoutTag> = inputs.iter().map(Matrix::layout_tag).collect();

        if !self.force_dense.contains(op) {
            // 1. exact
            let key = OperatorKey::new(op, &tags, out_formats);
            if let Some(imp) = self.fwd.get(&key) {
                let raw = imp(inputs, out_formats)?;
                let (outputs, warnings) = self.finalize(raw, out_formats)?;
                return Ok(DispatchResult {
                    outcome: PathOutcome::Exact,
                    outputs,
                    warnings,
                });
            }
            // 2. single lossless conversions per input, fewest conversions
            //    first, input order then table order as tie-break
            if let Some((conversions, key)) = self.find_rewrite(op, &tags, out_formats) {
                let imp = self.fwd.get(&key).expect("rewrite hit");
                let mut converted: Vec<Matrix<T>> = inputs.to_vec();
                for &(i, _, to) in &conversions {
                    converted[i] = convert_lossless(&converted[i], to)?;
                }
                let raw = imp(&converted, out_formats)?;
                let (outputs, warnings) = self.finalize(raw, out_formats)?;
                return Ok(DispatchResult {
                    outcome: PathOutcome::ViaConversion(conversions),
                    outputs,
                    warnings,
                });
            }
        }

        // 3. dense fallback: decode all inputs, run the dense implementation
        let dense_tags = vec![LayoutTag::Dense; inputs.len()];
        let dense_tmp = vec![LayoutTag::Dense; out_formats.len()];
        let dense_key = OperatorKey::from_tags(op, &dense_tags, &dense_tmp);
        let Some(imp) = self.fwd.get(&dense_key) else {
            return Err(Error::NoImplementation(format!(
                "{op} has no implementation for [{}] and no dense route",
                tags.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
            )));
        };
        let record = self.warn(
            op,
            &tags,
            "dense_fallback",
            "no sparse implementation found; inputs decoded to masked dense",
        );
        let dense_inputs: Vec<Matrix<T>> =
            inputs.iter().map(|x| Matrix::Dense(x.to_dense())).collect();
        let dense_formats: Vec<OutputFormat> = out_formats
            .iter()
            .map(|f| OutputFormat {
                inline: f.inline.clone(),
                tmp_layout: LayoutTag::Dense,
                external: f.external.clone(),
                out_layout: f.out_layout,
            })
            .collect();
        let raw = imp(&dense_inputs, &dense_formats)?;
        let (outputs, mut warnings) = self.finalize(raw, &dense_formats)?;
        warnings.insert(0, record);
        Ok(DispatchResult {
            outcome: PathOutcome::DenseFallback,
            outputs,
            warnings,
        })
    }

    /// Searches for a registered key reachable by converting a subset of
    /// inputs, one lossless conversion each. Deterministic order: number of
    /// converted inputs ascending, then input position, then table order.
    fn find_rewrite(
        &self,
        op: &str,
        tags: &[LayoutTag],
        out_formats: &[OutputFormat],
    ) -> Option<(Vec<(usize, LayoutTag, LayoutTag)>, OperatorKey)> {
        let options: Vec<Vec<LayoutTag>> = tags
            .iter()
            .map(|t| rewrite_targets(t.kind()).to_vec())
            .collect();
        let k = tags.len();
        // enumerate subsets of inputs to convert, smallest subsets first
        let mut subsets: Vec<Vec<usize>> = (1u32..(1 << k))
            .map(|bits| (0..k).filter(|i| bits >> i & 1 == 1).collect())
            .collect();
        subsets.sort_by_key(|s| (s.len(), s.clone()));
        for subset in subsets {
            let mut choice = vec![0usize; subset.len()];
            loop {
                let mut new_tags = tags.to_vec();
                let mut conversions = Vec::with_capacity(subset.len());
                let mut ok = true;
                for (slot, &i) in subset.iter().enumerate() {
                    match options[i].get(choice[slot]) {
                        Some(&to) => {
                            conversions.push((i, tags[i], to));
                            new_tags[i] = to;
                        }
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    let key = OperatorKey::new(op, &new_tags, out_formats);
                    if self.fwd.contains_key(&key) {
                        return Some((conversions, key));
                    }
                }
                // advance mixed-radix counter over this subset's options
                let mut advanced = false;
                for slot in (0..subset.len()).rev() {
                    choice[slot] += 1;
                    if choice[slot] < options[subset[slot]].len() {
                        advanced = true;
                        break;
                    }
                    choice[slot] = 0;
                }
                if !advanced {
                    break;
                }
            }
        }
        None
    }

    /// Applies inline then external sparsifiers and the final layout to
    /// every raw output.
    fn finalize(
        &self,
        raw: Vec<Matrix<T>>,
        out_formats: &[OutputFormat],
    ) -> Result<(Vec<Matrix<T>>, Vec<WarningRecord>)> {
        if raw.len() != out_formats.len() {
            return Err(Error::Structure(format!(
                "implementation produced {} outputs for {} formats",
                raw.len(),
                out_formats.len()
            )));
        }
        let before = self.warnings.lock().unwrap().len();
        let mut outputs = Vec::with_capacity(raw.len());
        for (mut cur, f) in raw.into_iter().zip(out_formats) {
            if cur.layout_tag() != f.tmp_layout {
                return Err(Error::Structure(format!(
                    "implementation produced {} where the format's tmp layout is {}",
                    cur.layout_tag(),
                    f.tmp_layout
                )));
            }
            // inline sparsifier, applied post-hoc in the tmp layout
            if f.inline.kind() != SparsifierKind::KeepAll {
                let target = if f.tmp_layout == LayoutTag::Dense {
                    LayoutTag::Masked
                } else {
                    f.tmp_layout
                };
                cur = self.apply_sparsifier(&f.inline, &cur, target, None)?;
            }
            // external sparsifier + final layout
            if f.external.kind() != SparsifierKind::KeepAll {
                cur = self.apply_sparsifier(&f.external, &cur, f.out_layout, None)?;
            } else if cur.layout_tag() != f.out_layout {
                cur = convert_lossless(&cur, f.out_layout)?;
            }
            outputs.push(cur);
        }
        let after = self.warnings.lock().unwrap();
        Ok((outputs, after[before..].to_vec()))
    }

    /// Runs the registered backward implementation for `op`, producing one
    /// dense gradient per forward input.
    pub fn execute_backward(
        &self,
        op: &str,
        inputs: &[Matrix<T>],
        grad_out: &DenseMatrix<T>,
    ) -> Result<Vec<DenseMatrix<T>>> {
        let tags: Vec<LayoutTag> = inputs.iter().map(Matrix::layout_tag).collect();
        if let Some(imp) = self.bwd.get(&BackwardKey::new(op, &tags)) {
            return imp(inputs, grad_out);
        }
        // dense backward route
        let dense_key = BackwardKey::new(op, &vec![LayoutTag::Dense; inputs.len()]);
        let Some(imp) = self.bwd.get(&dense_key) else {
            return Err(Error::NoImplementation(format!(
                "{op} has no backward implementation"
            )));
        };
        let dense_inputs: Vec<Matrix<T>> =
            inputs.iter().map(|x| Matrix::Dense(x.to_dense())).collect();
        imp(&dense_inputs, grad_out)
    }
}

/// Dense-route sparsification: decode, apply the spec, lay out the result.
/// This is also the body of every generic built-in sparsifier route.
fn universal_sparsify<T: Scalar>(
    spec: &SparsifierSpec,
    x: &Matrix<T>,
    out_layout: LayoutTag,
    reference: Option<&Matrix<T>>,
) -> Result<Matrix<T>> {
    let dense = x.to_dense();
    if spec.kind() == SparsifierKind::SameFormat {
        let Some(reference) = reference else {
            return Err(Error::InvalidParameter(
                "SameFormat sparsification needs a reference tensor".into(),
            ));
        };
        return sparsify::apply_same_format(reference, &dense);
    }
    if let LayoutTag::GroupedNm { n, m, g } = out_layout {
        let SparsifierSpec::GroupedNm {
            n: sn,
            m: sm,
            g: sg,
            sparse_dim,
            group_dim,
        } = *spec
        else {
            return Err(Error::NoImplementation(format!(
                "only the grouped n:m sparsifier can produce a grouped layout, got {:?}",
                spec.kind()
            )));
        };
        if (sn, sm, sg) != (n, m, g) {
            return Err(Error::InvalidParameter(format!(
                "sparsifier {sn}:{sm}:{sg} cannot produce layout {n}:{m}:{g}"
            )));
        }
        let fmt = NmgFormat::new(n, m, g, sparse_dim, group_dim)?;
        return Ok(Matrix::GroupedNm(nmg::from_dense_greedy(&dense, fmt)?));
    }
    let masked = sparsify::apply(spec, &dense)?;
    match out_layout.kind() {
        LayoutKind::Dense => Ok(Matrix::Dense(masked.to_dense())),
        LayoutKind::Masked => Ok(Matrix::Masked(masked)),
        LayoutKind::Csr => Ok(Matrix::Csr(CsrMatrix::from_dense_with_support(
            masked.dense(),
            masked.mask(),
        )?)),
        LayoutKind::Coo => {
            let csr = CsrMatrix::from_dense_with_support(masked.dense(), masked.mask())?;
            Ok(Matrix::Coo(csr.to_coo()))
        }
        LayoutKind::GroupedNm => unreachable!("handled above"),
    }
}

// ---------------------------------------------------------------------------
// Built-in operators
// ---------------------------------------------------------------------------

mod builtins {
    use super::*;

    pub fn register_all<T: Scalar>(r: &mut Registry<T>) {
        register_add(r);
        register_matmul(r);
        register_linear(r);
        register_relu(r);
        register_backward(r);
        register_sparsifier_routes(r);
    }

    fn dense_of<T: Scalar>(x: &Matrix<T>) -> Result<&DenseMatrix<T>> {
        match x {
            Matrix::Dense(d) => Ok(d),
            _ => Err(Error::Structure("expected dense operand".into())),
        }
    }

    fn add_dense<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                expected: a.shape(),
                got: b.shape(),
                context: "add".into(),
            });
        }
        let values = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| x + y)
            .collect();
        DenseMatrix::new(a.rows(), a.cols(), values)
    }

    fn register_add<T: Scalar>(r: &mut Registry<T>) {
        let dense: OpImpl<T> = Arc::new(|inputs, _| {
            let (a, b) = (dense_of(&inputs[0])?, dense_of(&inputs[1])?);
            Ok(vec![Matrix::Dense(add_dense(a, b)?)])
        });
        r.register_fwd(
            OperatorKey::from_tags(
                "add",
                &[LayoutTag::Dense, LayoutTag::Dense],
                &[LayoutTag::Dense],
            ),
            dense,
        );

        // masked + masked: union mask, summed values
        let masked: OpImpl<T> = Arc::new(|inputs, _| {
            let (Matrix::Masked(a), Matrix::Masked(b)) = (&inputs[0], &inputs[1]) else {
                return Err(Error::Structure("expected masked operands".into()));
            };
            let sum = add_dense(a.dense(), b.dense())?;
            let mask: Vec<bool> = a
                .mask()
                .iter()
                .zip(b.mask())
                .map(|(&x, &y)| x || y)
                .collect();
            Ok(vec![Matrix::Masked(MaskedMatrix::apply_mask(&sum, mask)?)])
        });
        r.register_fwd(
            OperatorKey::from_tags(
                "add",
                &[LayoutTag::Masked, LayoutTag::Masked],
                &[LayoutTag::Masked],
            ),
            masked,
        );

        // csr + csr with keep-all: the support is the union of the inputs'
        // supports; a sum that cancels to zero stays stored
        let csr: OpImpl<T> = Arc::new(|inputs, _| {
            let (Matrix::Csr(a), Matrix::Csr(b)) = (&inputs[0], &inputs[1]) else {
                return Err(Error::Structure("expected csr operands".into()));
            };
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    expected: a.shape(),
                    got: b.shape(),
                    context: "add".into(),
                });
            }
            let mut row_ptr = vec![0usize];
            let mut col_idx = Vec::new();
            let mut values = Vec::new();
            for i in 0..a.rows() {
                let mut ai = a.row_entries(i).peekable();
                let mut bi = b.row_entries(i).peekable();
                loop {
                    match (ai.peek().copied(), bi.peek().copied()) {
                        (Some((ja, va)), Some((jb, vb))) => {
                            if ja == jb {
                                col_idx.push(ja);
                                values.push(va + vb);
                                ai.next();
                                bi.next();
                            } else if ja < jb {
                                col_idx.push(ja);
                                values.push(va);
                                ai.next();
                            } else {
                                col_idx.push(jb);
                                values.push(vb);
                                bi.next();
                            }
                        }
                        (Some((j, v)), None) => {
                            col_idx.push(j);
                            values.push(v);
                            ai.next();
                        }
                        (None, Some((j, v))) => {
                            col_idx.push(j);
                            values.push(v);
                            bi.next();
                        }
                        (None, None) => break,
                    }
                }
                row_ptr.push(values.len());
            }
            Ok(vec![Matrix::Csr(CsrMatrix::from_parts(
                a.rows(),
                a.cols(),
                row_ptr,
                col_idx,
                values,
            )?)])
        });
        r.register_fwd(
            OperatorKey::from_tags("add", &[LayoutTag::Csr, LayoutTag::Csr], &[LayoutTag::Csr]),
            csr,
        );
    }

    fn register_matmul<T: Scalar>(r: &mut Registry<T>) {
        let tiling = r.tiling;
        let dense: OpImpl<T> = Arc::new(move |inputs, _| {
            let (a, b) = (dense_of(&inputs[0])?, dense_of(&inputs[1])?);
            Ok(vec![Matrix::Dense(dense_gemm_tiled(a, b, tiling)?)])
        });
        r.register_fwd(
            OperatorKey::from_tags(
                "matmul",
                &[LayoutTag::Dense, LayoutTag::Dense],
                &[LayoutTag::Dense],
            ),
            dense,
        );

        let masked: OpImpl<T> = Arc::new(move |inputs, _| {
            let Matrix::Masked(a) = &inputs[0] else {
                return Err(Error::Structure("expected masked left operand".into()));
            };
            let b = dense_of(&inputs[1])?;
            Ok(vec![Matrix::Dense(dense_gemm_tiled(a.dense(), b, tiling)?)])
        });
        r.register_fwd(
            OperatorKey::from_tags(
                "matmul",
                &[LayoutTag::Masked, LayoutTag::Dense],
                &[LayoutTag::Dense],
            ),
            masked,
        );

        let csr: OpImpl<T> = Arc::new(|inputs, _| {
            let Matrix::Csr(a) = &inputs[0] else {
                return Err(Error::Structure("expected csr left operand".into()));
            };
            let b = dense_of(&inputs[1])?;
            Ok(vec![Matrix::Dense(csr_spmm(a, b)?)])
        });
        r.register_fwd(
            OperatorKey::from_tags(
                "matmul",
                &[LayoutTag::Csr, LayoutTag::Dense],
                &[LayoutTag::Dense],
            ),
            csr,
        );
    }

    fn bias_add<T: Scalar>(c: &mut DenseMatrix<T>, bias: &DenseMatrix<T>) -> Result<()> {
        if bias.shape() != (c.rows(), 1) {
            return Err(Error::ShapeMismatch {
                expected: (c.rows(), 1),
                got: bias.shape(),
                context: "linear bias".into(),
            });
        }
        let cols = c.cols();
        for i in 0..c.rows() {
            let b = bias.get(i, 0);
            for v in &mut c.as_mut_slice()[i * cols..(i + 1) * cols] {
                *v += b;
            }
        }
        Ok(())
    }

    fn register_linear<T: Scalar>(r: &mut Registry<T>) {
        let tiling = r.tiling;
        for w_tag in [LayoutTag::Dense, LayoutTag::Masked] {
            let imp: OpImpl<T> = Arc::new(move |inputs, _| {
                let w = match &inputs[0] {
                    Matrix::Dense(d) => d.clone(),
                    Matrix::Masked(m) => m.dense().clone(),
                    _ => return Err(Error::Structure("unexpected weight layout".into())),
                };
                let x = dense_of(&inputs[1])?;
                let bias = dense_of(&inputs[2])?;
                let mut c = dense_gemm_tiled(&w, x, tiling)?;
                bias_add(&mut c, bias)?;
                Ok(vec![Matrix::Dense(c)])
            });
            r.register_fwd(
                OperatorKey::from_tags(
                    "linear",
                    &[w_tag, LayoutTag::Dense, LayoutTag::Dense],
                    &[LayoutTag::Dense],
                ),
                imp,
            );
        }
    }

    fn register_relu<T: Scalar>(r: &mut Registry<T>) {
        let relu: OpImpl<T> = Arc::new(|inputs, _| {
            let x = dense_of(&inputs[0])?;
            let values = x
                .as_slice()
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect();
            Ok(vec![Matrix::Dense(DenseMatrix::new(
                x.rows(),
                x.cols(),
                values,
            )?)])
        });
        r.register_fwd(
            OperatorKey::from_tags("relu", &[LayoutTag::Dense], &[LayoutTag::Dense]),
            relu,
        );
    }

    fn register_backward<T: Scalar>(r: &mut Registry<T>) {
        let tiling = r.tiling;
        // matmul: dA = dC * B^T, dB = A^T * dC
        for a_tag in [LayoutTag::Dense, LayoutTag::Masked] {
            let imp: BwdImpl<T> = Arc::new(move |inputs, grad| {
                let a = inputs[0].to_dense();
                let b = inputs[1].to_dense();
                let da = dense_gemm_tiled(grad, &b.transpose(), tiling)?;
                let db = dense_gemm_tiled(&a.transpose(), grad, tiling)?;
                Ok(vec![da, db])
            });
            r.register_bwd(BackwardKey::new("matmul", &[a_tag, LayoutTag::Dense]), imp);
        }

        let add_bwd: BwdImpl<T> = Arc::new(|_, grad| Ok(vec![grad.clone(), grad.clone()]));
        r.register_bwd(
            BackwardKey::new("add", &[LayoutTag::Dense, LayoutTag::Dense]),
            add_bwd,
        );

        // linear(w, x, b): dW = dC x^T, dX = w^T dC, db = row sums of dC
        for w_tag in [LayoutTag::Dense, LayoutTag::Masked] {
            let imp: BwdImpl<T> = Arc::new(move |inputs, grad| {
                let w = inputs[0].to_dense();
                let x = inputs[1].to_dense();
                let dw = dense_gemm_tiled(grad, &x.transpose(), tiling)?;
                let dx = dense_gemm_tiled(&w.transpose(), grad, tiling)?;
                let db = DenseMatrix::from_fn(grad.rows(), 1, |i, _| {
                    grad.row(i).iter().fold(T::zero(), |acc, &v| acc + v)
                });
                Ok(vec![dw, dx, db])
            });
            r.register_bwd(
                BackwardKey::new("linear", &[w_tag, LayoutTag::Dense, LayoutTag::Dense]),
                imp,
            );
        }

        // relu: gradient gated by the forward activation sign
        let relu_bwd: BwdImpl<T> = Arc::new(|inputs, grad| {
            let x = inputs[0].to_dense();
            if x.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    expected: x.shape(),
                    got: grad.shape(),
                    context: "relu backward".into(),
                });
            }
            let values = x
                .as_slice()
                .iter()
                .zip(grad.as_slice())
                .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            Ok(vec![DenseMatrix::new(x.rows(), x.cols(), values)?])
        });
        r.register_bwd(BackwardKey::new("relu", &[LayoutTag::Dense]), relu_bwd);
    }

    /// Registers the grouped-format matmul/linear (forward and backward)
    /// for one parameterization.
    pub fn register_nmg<T: Scalar>(r: &mut Registry<T>, fmt: NmgFormat) {
        let tiling = r.tiling;
        let tag = LayoutTag::GroupedNm {
            n: fmt.n,
            m: fmt.m,
            g: fmt.g,
        };
        let mm: OpImpl<T> = Arc::new(move |inputs, _| {
            let Matrix::GroupedNm(a) = &inputs[0] else {
                return Err(Error::Structure("expected grouped left operand".into()));
            };
            let b = dense_of(&inputs[1])?;
            Ok(vec![Matrix::Dense(nmg_spmm(a, b, tiling)?)])
        });
        r.register_fwd(
            OperatorKey::from_tags("matmul", &[tag, LayoutTag::Dense], &[LayoutTag::Dense]),
            mm,
        );
        let lin: OpImpl<T> = Arc::new(move |inputs, _| {
            let Matrix::GroupedNm(w) = &inputs[0] else {
                return Err(Error::Structure("expected grouped weight".into()));
            };
            let x = dense_of(&inputs[1])?;
            let bias = dense_of(&inputs[2])?;
            let mut c = nmg_spmm(w, x, tiling)?;
            bias_add(&mut c, bias)?;
            Ok(vec![Matrix::Dense(c)])
        });
        r.register_fwd(
            OperatorKey::from_tags(
                "linear",
                &[tag, LayoutTag::Dense, LayoutTag::Dense],
                &[LayoutTag::Dense],
            ),
            lin,
        );
        let mm_bwd: BwdImpl<T> = Arc::new(move |inputs, grad| {
            let a = inputs[0].to_dense();
            let b = inputs[1].to_dense();
            let da = dense_gemm_tiled(grad, &b.transpose(), tiling)?;
            let db = dense_gemm_tiled(&a.transpose(), grad, tiling)?;
            Ok(vec![da, db])
        });
        r.register_bwd(BackwardKey::new("matmul", &[tag, LayoutTag::Dense]), mm_bwd);
    }

    /// Generic sparsifier routes: every standard kind, from every layout,
    /// into every layout it can realize.
    fn register_sparsifier_routes<T: Scalar>(r: &mut Registry<T>) {
        let universal: SparsifierImpl<T> =
            Arc::new(|spec, x, out, reference| universal_sparsify(spec, x, out, reference));
        let kinds = [
            SparsifierKind::KeepAll,
            SparsifierKind::RandomFraction,
            SparsifierKind::ScalarThreshold,
            SparsifierKind::PerBlockFraction,
            SparsifierKind::ScalarFraction,
            SparsifierKind::BlockwiseFraction,
            SparsifierKind::GroupedNm,
            SparsifierKind::SameFormat,
        ];
        let layouts = [
            LayoutKind::Dense,
            LayoutKind::Masked,
            LayoutKind::Csr,
            LayoutKind::Coo,
            LayoutKind::GroupedNm,
        ];
        for kind in kinds {
            for in_layout in layouts {
                for out_layout in layouts {
                    // only the grouped sparsifier (or a same-format reference)
                    // can realize the grouped layout
                    if out_layout == LayoutKind::GroupedNm
                        && !matches!(kind, SparsifierKind::GroupedNm | SparsifierKind::SameFormat)
                    {
                        continue;
                    }
                    r.register_sparsifier(kind, in_layout, out_layout, universal.clone());
                }
            }
        }
    }
}
