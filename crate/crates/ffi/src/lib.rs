//! C ABI over the guard pipeline.
//!
//! Every function returns an [`FgStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`fg_last_error`]. Handles are opaque
//! and must be released with their matching `*_free` function. Panics never
//! cross the boundary; they surface as [`FgStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use flowguard::decoder::LatentDecoder;
use flowguard::detector::Classifier;
use flowguard::diffusion::make_linear_beta_schedule;
use flowguard::freq::LowPassFilter;
use flowguard::guard::{guard_step, GuardConfig, GuardSession};
use flowguard::linear::AffineDecoder;
use flowguard::{Error, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimMismatch = 5,
    InsufficientTrajectory = 6,
    Numerical = 7,
    Panic = 8,
}

impl From<&Error> for FgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => FgStatus::Io,
            Error::BadMagic(_)
            | Error::UnknownDtype(_)
            | Error::Truncated { .. }
            | Error::TrailingBytes(_)
            | Error::Manifest(_)
            | Error::Json(_) => FgStatus::Format,
            Error::DimMismatch { .. } => FgStatus::DimMismatch,
            Error::InsufficientTrajectory { .. } | Error::MissingSteps(_) => FgStatus::InsufficientTrajectory,
            Error::RankDeficient { .. } | Error::Divergence { .. } => FgStatus::Numerical,
            _ => FgStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(FgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(FgStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FgStatus::NullPointer, format!("{what} is null"))
}

fn guarded(f: impl FnOnce() -> Result<(), Fail>) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FgStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            FgStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FgStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn latent_tensor(dec: &AffineDecoder, data: &[f32]) -> Result<Tensor, Fail> {
    if data.len() != dec.latent_len() {
        return Err(Error::DimMismatch {
            expected: vec![dec.latent_len()],
            got: vec![data.len()],
        }
        .into());
    }
    Ok(Tensor::new(dec.latent_dims().to_vec(), data.to_vec())?)
}

/// Copies the calling thread's last error message into `buf`, NUL
/// terminated and truncated to `len` bytes. Returns the full message length.
///
/// # Safety
/// `buf` must be writable for `len` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn fg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Opaque affine decoder.
pub struct FgDecoder(AffineDecoder);

/// Loads an affine decoder directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_decoder_load(dir: *const c_char, out: *mut *mut FgDecoder) -> FgStatus {
    guarded(|| {
        let out = out_arg(out, "out")?;
        let dec = AffineDecoder::load(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(FgDecoder(dec)));
        Ok(())
    })
}

/// Flat latent and image lengths.
///
/// # Safety
/// `dec` must come from [`fg_decoder_load`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_decoder_lengths(dec: *const FgDecoder, latent_len: *mut usize, image_len: *mut usize) -> FgStatus {
    guarded(|| {
        let dec = &dec.as_ref().ok_or_else(|| null("dec"))?.0;
        *out_arg(latent_len, "latent_len")? = dec.latent_len();
        *out_arg(image_len, "image_len")? = dec.image_len();
        Ok(())
    })
}

/// Decodes `batch` latents laid out back to back into `images`.
///
/// # Safety
/// `latents` must hold `batch * latent_len` floats and `images`
/// `batch * image_len`.
#[no_mangle]
pub unsafe extern "C" fn fg_decoder_decode(
    dec: *const FgDecoder,
    latents: *const f32,
    batch: usize,
    images: *mut f32,
) -> FgStatus {
    guarded(|| {
        let dec = &dec.as_ref().ok_or_else(|| null("dec"))?.0;
        let z = slice_arg(latents, batch * dec.latent_len(), "latents")?;
        let x = dec.decode_flat(z, batch);
        if !x.is_empty() {
            if images.is_null() {
                return Err(null("images"));
            }
            ptr::copy_nonoverlapping(x.as_ptr(), images, x.len());
        }
        Ok(())
    })
}

/// # Safety
/// `dec` must come from [`fg_decoder_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fg_decoder_free(dec: *mut FgDecoder) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// Opaque guard: one affine decoder, filter, classifier and step set.
pub struct FgGuard(GuardConfig);

/// Builds a guard from a classifier directory and a decoder directory.
///
/// # Safety
/// Strings must be NUL-terminated; `steps` must hold `n_steps` entries.
#[no_mangle]
pub unsafe extern "C" fn fg_guard_load(
    classifier_dir: *const c_char,
    decoder_dir: *const c_char,
    steps: *const usize,
    n_steps: usize,
    threshold: f64,
    lpf_r: f64,
    out: *mut *mut FgGuard,
) -> FgStatus {
    guarded(|| {
        let out = out_arg(out, "out")?;
        let clf = Classifier::load(&path_arg(classifier_dir, "classifier_dir")?)?;
        let dec = AffineDecoder::load(&path_arg(decoder_dir, "decoder_dir")?)?;
        let steps = slice_arg(steps, n_steps, "steps")?;
        let cfg = GuardConfig::new(steps, threshold, dec, lpf_r, clf)?;
        *out = Box::into_raw(Box::new(FgGuard(cfg)));
        Ok(())
    })
}

/// Scores one latent: the estimated probability of the target content.
///
/// # Safety
/// `latent` must hold `len` floats; `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_guard_score(guard: *const FgGuard, latent: *const f32, len: usize, score: *mut f64) -> FgStatus {
    guarded(|| {
        let cfg = &guard.as_ref().ok_or_else(|| null("guard"))?.0;
        let score = out_arg(score, "score")?;
        let z = latent_tensor(cfg.decoder(), slice_arg(latent, len, "latent")?)?;
        *score = guard_step(cfg, &z)?;
        Ok(())
    })
}

/// # Safety
/// `guard` must come from [`fg_guard_load`] or be null. Open sessions keep
/// their own copy and stay usable.
#[no_mangle]
pub unsafe extern "C" fn fg_guard_free(guard: *mut FgGuard) {
    if !guard.is_null() {
        drop(Box::from_raw(guard));
    }
}

/// Streaming session over one trajectory.
pub struct FgSession {
    // borrows `*cfg`; taken before `cfg` is freed
    session: Option<GuardSession<'static>>,
    cfg: *mut GuardConfig,
}

impl FgSession {
    fn cfg(&self) -> &'static GuardConfig {
        // SAFETY: `cfg` is owned by this session and freed only in Drop.
        unsafe { &*self.cfg }
    }
}

impl Drop for FgSession {
    fn drop(&mut self) {
        self.session.take();
        // SAFETY: allocated by Box::into_raw in fg_session_new; no borrow remains.
        drop(unsafe { Box::from_raw(self.cfg) });
    }
}

/// Opens a session. The session keeps its own copy of the guard.
///
/// # Safety
/// `guard` must come from [`fg_guard_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_session_new(guard: *const FgGuard, out: *mut *mut FgSession) -> FgStatus {
    guarded(|| {
        let cfg = &guard.as_ref().ok_or_else(|| null("guard"))?.0;
        let out = out_arg(out, "out")?;
        let cfg = Box::into_raw(Box::new(cfg.clone()));
        let session = Some(GuardSession::new(&*cfg));
        *out = Box::into_raw(Box::new(FgSession { session, cfg }));
        Ok(())
    })
}

/// Feeds the latent after generation step `step`. `triggered` becomes 1 once
/// the guard fires, at which point generation should stop.
///
/// # Safety
/// `session` must come from [`fg_session_new`]; `latent` must hold `len`
/// floats; `triggered` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_session_push(
    session: *mut FgSession,
    step: usize,
    latent: *const f32,
    len: usize,
    triggered: *mut u8,
) -> FgStatus {
    guarded(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let triggered = out_arg(triggered, "triggered")?;
        let z = latent_tensor(s.cfg().decoder(), slice_arg(latent, len, "latent")?)?;
        let session = s.session.as_mut().ok_or_else(|| Fail(FgStatus::InvalidArgument, "session already finished".into()))?;
        *triggered = u8::from(session.push(step, &z)?);
        Ok(())
    })
}

/// Closes the stream and reports the verdict. `trigger_step` is -1 when the
/// guard never fired. Further pushes fail; the handle must still be freed.
///
/// # Safety
/// `session` must come from [`fg_session_new`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_session_finish(
    session: *mut FgSession,
    label: *mut u8,
    trigger_step: *mut i64,
    max_score: *mut f64,
) -> FgStatus {
    guarded(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let label = out_arg(label, "label")?;
        let trigger_step = out_arg(trigger_step, "trigger_step")?;
        let max_score = out_arg(max_score, "max_score")?;
        let session = s.session.take().ok_or_else(|| Fail(FgStatus::InvalidArgument, "session already finished".into()))?;
        let decision = session.finish(None)?;
        *label = decision.label;
        *trigger_step = decision.trigger_step.map_or(-1, |t| t as i64);
        *max_score = decision.scores.iter().map(|s| s.score).fold(f64::NAN, f64::max);
        Ok(())
    })
}

/// # Safety
/// `session` must come from [`fg_session_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fg_session_free(session: *mut FgSession) {
    if session.is_null() {
        return;
    }
    drop(Box::from_raw(session));
}

/// Low-pass filters `channels` planes of `height * width` floats in place.
///
/// # Safety
/// `data` must hold `channels * height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn fg_lowpass(data: *mut f32, channels: usize, height: usize, width: usize, r: f64) -> FgStatus {
    guarded(|| {
        let lpf = LowPassFilter::new(height, width, r)?;
        let n = channels * height * width;
        if n == 0 {
            return Ok(());
        }
        if data.is_null() {
            return Err(null("data"));
        }
        let buf = std::slice::from_raw_parts_mut(data, n);
        for plane in buf.chunks_exact_mut(height * width) {
            lpf.apply_slice(plane);
        }
        Ok(())
    })
}

/// Cumulative signal fraction at diffusion time `t` of a linear schedule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_alpha_bar(total_steps: usize, beta_min: f64, beta_max: f64, t: usize, out: *mut f64) -> FgStatus {
    guarded(|| {
        let out = out_arg(out, "out")?;
        *out = make_linear_beta_schedule(total_steps, beta_min, beta_max)?.alpha_bar(t)?;
        Ok(())
    })
}
