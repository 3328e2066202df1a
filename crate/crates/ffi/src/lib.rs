//! C ABI over the `tokenaudit` core.
//!
//! Conventions:
//! - every function returns a [`TaStatus`]; results go through out-pointers;
//! - vocabularies and models are opaque heap handles released with their
//!   `*_free` function;
//! - token sequences are `uint32_t` id arrays in which a trailing EOS id
//!   marks a terminated sequence;
//! - variable-length results are written to caller buffers. When a buffer
//!   is too small nothing is written except the required length, and the
//!   call returns `TA_STATUS_BUFFER_TOO_SMALL`;
//! - on failure, [`ta_last_error`] describes the error on the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tokenaudit::gadget::{verify_reduction, DirectedGraph, GadgetVariant};
use tokenaudit::lattice::{count_tokenizations, greedy_tokenize};
use tokenaudit::model::{is_plausible, sequence_prob, GenerativeModel, NgramModel, SamplingRule, TableModel, Temperature};
use tokenaudit::oracle::{SearchOptions, DEFAULT_HAMILTONIAN_LIMIT};
use tokenaudit::policy::{apply_heuristic, apply_random_split};
use tokenaudit::pricing::{calibrate_tpc, PricingMechanism};
use tokenaudit::vocab::{TokenSequence, Vocabulary};
use tokenaudit::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Overflow = 4,
    InvalidVocabulary = 10,
    InvalidSequence = 11,
    InvalidInput = 12,
    ModelContract = 13,
    UnsupportedRule = 14,
    Budget = 15,
    Pricing = 16,
    Calibration = 17,
    UndefinedMargin = 18,
    Integrity = 19,
    Construction = 20,
    Parse = 21,
    Config = 22,
    Io = 23,
    Panic = 99,
}

impl From<&Error> for TaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidVocabulary(_) => TaStatus::InvalidVocabulary,
            Error::InvalidSequence(_) => TaStatus::InvalidSequence,
            Error::InvalidInput(_) => TaStatus::InvalidInput,
            Error::ModelContract(_) => TaStatus::ModelContract,
            Error::UnsupportedRule(_) => TaStatus::UnsupportedRule,
            Error::Budget(_) => TaStatus::Budget,
            Error::Pricing(_) => TaStatus::Pricing,
            Error::Calibration(_) => TaStatus::Calibration,
            Error::UndefinedMargin(_) => TaStatus::UndefinedMargin,
            Error::Integrity(_) => TaStatus::Integrity,
            Error::Construction(_) => TaStatus::Construction,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => TaStatus::Parse,
            Error::Config(_) => TaStatus::Config,
            Error::Io { .. } => TaStatus::Io,
        }
    }
}

/// Opaque vocabulary handle.
pub struct TaVocabulary(Vocabulary);

/// Opaque next-token model handle, bound to the vocabulary it was built for.
pub struct TaModel {
    model: Box<dyn GenerativeModel>,
    vocab_size: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(TaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(TaStatus::from(&e), e.to_string())
    }
}

type FfiResult<T = ()> = std::result::Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> TaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(TaStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn sequence(vocab: &Vocabulary, ids: *const u32, len: usize) -> FfiResult<TokenSequence> {
    Ok(vocab.sequence_from_ids(slice(ids, len, "ids")?)?)
}

unsafe fn write_ids(ids: &[u32], buf: *mut u32, cap: usize, out_len: *mut usize) -> FfiResult {
    *out(out_len, "out_len")? = ids.len();
    if ids.len() > cap {
        return Err(Fail(
            TaStatus::BufferTooSmall,
            format!("need {} ids, buffer holds {cap}", ids.len()),
        ));
    }
    if !ids.is_empty() {
        if buf.is_null() {
            return Err(null("out_ids"));
        }
        ptr::copy_nonoverlapping(ids.as_ptr(), buf, ids.len());
    }
    Ok(())
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> FfiResult<T> {
    Ok(s.parse()?)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a vocabulary from its JSON description.
#[no_mangle]
pub unsafe extern "C" fn ta_vocab_from_json(json: *const c_char, out_vocab: *mut *mut TaVocabulary) -> TaStatus {
    guard(|| {
        let slot = out(out_vocab, "out_vocab")?;
        let v = Vocabulary::from_json_str(string(json, "json")?)?;
        *slot = Box::into_raw(Box::new(TaVocabulary(v)));
        Ok(())
    })
}

/// The reference vocabulary `a, b, aa, ab, aab, EOS`.
#[no_mangle]
pub unsafe extern "C" fn ta_vocab_reference_ab(out_vocab: *mut *mut TaVocabulary) -> TaStatus {
    guard(|| {
        *out(out_vocab, "out_vocab")? = Box::into_raw(Box::new(TaVocabulary(Vocabulary::reference_ab())));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ta_vocab_free(vocab: *mut TaVocabulary) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of tokens, EOS included.
#[no_mangle]
pub unsafe extern "C" fn ta_vocab_len(vocab: *const TaVocabulary, out_len: *mut usize) -> TaStatus {
    guard(|| {
        *out(out_len, "out_len")? = deref(vocab, "vocab")?.0.len();
        Ok(())
    })
}

/// EOS id, or `TA_STATUS_INVALID_VOCABULARY` when the vocabulary has none.
#[no_mangle]
pub unsafe extern "C" fn ta_vocab_eos(vocab: *const TaVocabulary, out_id: *mut u32) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let id = v
            .eos()
            .ok_or_else(|| Fail(TaStatus::InvalidVocabulary, "vocabulary has no EOS".into()))?;
        *out(out_id, "out_id")? = id.0;
        Ok(())
    })
}

/// Greedy longest-match tokenization of a UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn ta_greedy_tokenize(
    vocab: *const TaVocabulary,
    text: *const c_char,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let seq = greedy_tokenize(string(text, "text")?, v)?;
        write_ids(&seq.to_ids(v), out_ids, cap, out_len)
    })
}

/// Number of tokenizations of a string; `TA_STATUS_OVERFLOW` above 2^64-1.
#[no_mangle]
pub unsafe extern "C" fn ta_count_tokenizations(
    vocab: *const TaVocabulary,
    text: *const c_char,
    out_count: *mut u64,
) -> TaStatus {
    guard(|| {
        let n = count_tokenizations(string(text, "text")?, &deref(vocab, "vocab")?.0)?;
        *out(out_count, "out_count")? =
            u64::try_from(n).map_err(|_| Fail(TaStatus::Overflow, format!("{n} tokenizations")))?;
        Ok(())
    })
}

/// Renders a sequence into `buf` as a NUL-terminated string. `out_len`
/// receives the byte length without the terminator.
#[no_mangle]
pub unsafe extern "C" fn ta_render(
    vocab: *const TaVocabulary,
    ids: *const u32,
    len: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let s = v.render(&sequence(v, ids, len)?)?;
        *out(out_len, "out_len")? = s.len();
        if s.len() + 1 > cap {
            return Err(Fail(
                TaStatus::BufferTooSmall,
                format!("need {} bytes, buffer holds {cap}", s.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
        *buf.add(s.len()) = 0;
        Ok(())
    })
}

/// Price of a sequence. `mechanism` is `per-token:r_o=<x>`,
/// `per-char:r_c=<x>` or `char-table:<path>`.
#[no_mangle]
pub unsafe extern "C" fn ta_price(
    vocab: *const TaVocabulary,
    mechanism: *const c_char,
    ids: *const u32,
    len: usize,
    out_price: *mut f64,
) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let mech = PricingMechanism::from_spec(string(mechanism, "mechanism")?, None)?;
        *out(out_price, "out_price")? = mech.price(v, &sequence(v, ids, len)?)?;
        Ok(())
    })
}

/// Table model from JSON (prefix → distribution entries plus a default).
#[no_mangle]
pub unsafe extern "C" fn ta_model_table_from_json(
    vocab: *const TaVocabulary,
    json: *const c_char,
    out_model: *mut *mut TaModel,
) -> TaStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let v = &deref(vocab, "vocab")?.0;
        let m = TableModel::from_json_str(v, string(json, "json")?)?;
        *slot = Box::into_raw(Box::new(TaModel {
            model: Box::new(m),
            vocab_size: v.len(),
        }));
        Ok(())
    })
}

/// Additively smoothed n-gram model fitted on a corpus given as text, one
/// record of whitespace-separated ids per line.
#[no_mangle]
pub unsafe extern "C" fn ta_model_ngram(
    vocab: *const TaVocabulary,
    corpus: *const c_char,
    order: usize,
    alpha: f64,
    out_model: *mut *mut TaModel,
) -> TaStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let v = &deref(vocab, "vocab")?.0;
        let records = tokenaudit::model::parse_corpus(v, string(corpus, "corpus")?)?;
        let m = NgramModel::fit(v, &records, order, alpha)?;
        *slot = Box::into_raw(Box::new(TaModel {
            model: Box::new(m),
            vocab_size: v.len(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ta_model_free(model: *mut TaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_for<'a>(model: *const TaModel, v: &Vocabulary) -> FfiResult<&'a TaModel> {
    let m = deref(model, "model")?;
    if m.vocab_size != v.len() {
        return Err(Fail(
            TaStatus::ModelContract,
            format!("model covers {} tokens, vocabulary has {}", m.vocab_size, v.len()),
        ));
    }
    Ok(m)
}

/// Plausibility of a sequence under a sampling rule (`topp:<p>`,
/// `topk:<k>`, `thresh:<ε>`, `unrestricted`) and temperature. Also returns
/// the sequence probability when `out_prob` is non-null.
#[no_mangle]
pub unsafe extern "C" fn ta_is_plausible(
    vocab: *const TaVocabulary,
    model: *const TaModel,
    ids: *const u32,
    len: usize,
    rule: *const c_char,
    temperature: f64,
    out_plausible: *mut bool,
    out_prob: *mut f64,
) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let m = model_for(model, v)?;
        let seq = sequence(v, ids, len)?;
        let rule: SamplingRule = parse(string(rule, "rule")?)?;
        let t = Temperature::new(temperature)?;
        *out(out_plausible, "out_plausible")? = is_plausible(&m.model, &seq, rule, t)?;
        if let Some(p) = out_prob.as_mut() {
            *p = sequence_prob(&m.model, &seq, t)?;
        }
        Ok(())
    })
}

/// Plausibility-checked heuristic misreport with `m` splits. Writes the
/// reported ids and whether the split candidate passed the check.
#[no_mangle]
pub unsafe extern "C" fn ta_heuristic(
    vocab: *const TaVocabulary,
    model: *const TaModel,
    ids: *const u32,
    len: usize,
    m: usize,
    rule: *const c_char,
    temperature: f64,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
    out_passed: *mut bool,
) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let mdl = model_for(model, v)?;
        let seq = sequence(v, ids, len)?;
        let rule: SamplingRule = parse(string(rule, "rule")?)?;
        let t = Temperature::new(temperature)?;
        let passed = out(out_passed, "out_passed")?;
        let r = apply_heuristic(v, &seq, m, &mdl.model, rule, t)?;
        write_ids(&r.reported.to_ids(v), out_ids, cap, out_len)?;
        *passed = r.plausibility_passed == Some(true);
        Ok(())
    })
}

/// Up to `m` uniformly random splits, seeded. Writes the reported ids and
/// the number of splits applied.
#[no_mangle]
pub unsafe extern "C" fn ta_random_split(
    vocab: *const TaVocabulary,
    ids: *const u32,
    len: usize,
    m: usize,
    seed: u64,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
    out_splits: *mut usize,
) -> TaStatus {
    guard(|| {
        let v = &deref(vocab, "vocab")?.0;
        let seq = sequence(v, ids, len)?;
        let splits = out(out_splits, "out_splits")?;
        let r = apply_random_split(v, &seq, m, seed)?;
        write_ids(&r.reported.to_ids(v), out_ids, cap, out_len)?;
        *splits = r.splits_applied;
        Ok(())
    })
}

/// Per-character rate from `n` (tokens, characters) records and a
/// per-token rate.
#[no_mangle]
pub unsafe extern "C" fn ta_calibrate_tpc(
    tokens: *const usize,
    chars: *const usize,
    n: usize,
    r_o: f64,
    out_tokens_per_char: *mut f64,
    out_r_c: *mut f64,
) -> TaStatus {
    guard(|| {
        let t = slice(tokens, n, "tokens")?;
        let c = slice(chars, n, "chars")?;
        let records: Vec<(usize, usize)> = t.iter().copied().zip(c.iter().copied()).collect();
        let cal = calibrate_tpc(&records, r_o)?;
        *out(out_tokens_per_char, "out_tokens_per_char")? = cal.tokens_per_char;
        *out(out_r_c, "out_r_c")? = cal.r_c;
        Ok(())
    })
}

/// Builds the reduction gadget for a digraph on `n` nodes (edges as
/// 0-based `(from, to)` pairs, `2·n_edges` entries) and compares the exact
/// Hamiltonian-path answer with the longest plausible tokenization.
/// `variant` is `topp`, `topk`, `thresh` or `thresh:<δ>`; `out_longest`
/// is 0 when nothing is plausible.
#[no_mangle]
pub unsafe extern "C" fn ta_hardness_verify(
    n: usize,
    edges: *const u32,
    n_edges: usize,
    variant: *const c_char,
    out_hamiltonian: *mut bool,
    out_longest: *mut usize,
    out_agrees: *mut bool,
) -> TaStatus {
    guard(|| {
        let flat = slice(edges, 2 * n_edges, "edges")?;
        let pairs: Vec<(usize, usize)> = flat.chunks(2).map(|e| (e[0] as usize, e[1] as usize)).collect();
        let g = DirectedGraph::new(n, &pairs)?;
        let variant = parse::<GadgetVariant>(string(variant, "variant")?)?.resolve(n);
        let r = verify_reduction(&g, variant, SearchOptions::default(), DEFAULT_HAMILTONIAN_LIMIT)?;
        *out(out_hamiltonian, "out_hamiltonian")? = r.hamiltonian;
        *out(out_longest, "out_longest")? = r.longest.unwrap_or(0);
        *out(out_agrees, "out_agrees")? = r.agrees;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn greedy_and_render_round_trip() {
        unsafe {
            let mut v = ptr::null_mut();
            assert_eq!(ta_vocab_reference_ab(&mut v), TaStatus::Ok);
            let mut ids = [0u32; 8];
            let mut n = 0;
            assert_eq!(ta_greedy_tokenize(v, c("aabab").as_ptr(), ids.as_mut_ptr(), 8, &mut n), TaStatus::Ok);
            assert_eq!(&ids[..n], &[4, 3]);
            let mut buf = [0 as c_char; 16];
            let mut blen = 0;
            assert_eq!(ta_render(v, ids.as_ptr(), n, buf.as_mut_ptr(), 16, &mut blen), TaStatus::Ok);
            assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "aabab");
            assert_eq!(ta_render(v, ids.as_ptr(), n, buf.as_mut_ptr(), 3, &mut blen), TaStatus::BufferTooSmall);
            assert_eq!(blen, 5);
            ta_vocab_free(v);
        }
    }

    #[test]
    fn errors_set_message() {
        unsafe {
            let mut v = ptr::null_mut();
            assert_eq!(ta_vocab_from_json(c("{").as_ptr(), &mut v), TaStatus::Parse);
            assert!(v.is_null());
            assert!(!ta_last_error().is_null());
            let mut n = 0;
            assert_eq!(
                ta_count_tokenizations(ptr::null(), c("a").as_ptr(), &mut n),
                TaStatus::NullPointer
            );
            let msg = CStr::from_ptr(ta_last_error()).to_str().unwrap();
            assert!(msg.contains("vocab"));
        }
    }
}
