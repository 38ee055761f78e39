//! C ABI over `xlingual`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free`. Every fallible call returns an `int32_t` status:
//! `XL_OK` (0) on success, a core error code (see [`xlingual::Error::code`])
//! or one of the `XL_ERR_*` codes below on failure. The message of the most
//! recent failure on the calling thread is available from
//! [`xl_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use xlingual::babel::{World, WorldConfig, ENGLISH};
use xlingual::lm::{load_checkpoint, Model};
use xlingual::pipeline::{Overrides, RunConfig, Runner, Stage};
use xlingual::reward::{reward_rc, reward_rm, reward_rt, RewardConfig, RewardInput};
use xlingual::sampler::greedy_decode;
use xlingual::Error;

pub const XL_OK: i32 = 0;
pub const XL_ERR_NULL_POINTER: i32 = 100;
pub const XL_ERR_INVALID_UTF8: i32 = 101;
pub const XL_ERR_BUFFER_TOO_SMALL: i32 = 102;
pub const XL_ERR_OUT_OF_RANGE: i32 = 103;
pub const XL_ERR_PANIC: i32 = 104;

pub const XL_REWARD_RC: i32 = 0;
pub const XL_REWARD_RM: i32 = 1;
pub const XL_REWARD_RT: i32 = 2;

pub const XL_SPLIT_TRAIN: i32 = 0;
pub const XL_SPLIT_EVAL: i32 = 1;

/// A generated or loaded synthetic world.
pub struct XlWorld(World);

/// A language-model checkpoint.
pub struct XlModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<(CString, CString)>> = const { RefCell::new(None) };
}

fn set_error(msg: String, category: &'static str) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    let category = CString::new(category).expect("category has no nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some((msg, category)));
}

struct Failure(i32);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        set_error(e.to_string(), e.category());
        Failure(e.code())
    }
}

fn fail(code: i32, category: &'static str, msg: impl Into<String>) -> Failure {
    set_error(msg.into(), category);
    Failure(code)
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            XL_OK
        }
        Ok(Err(Failure(code))) => code,
        Err(_) => {
            set_error("internal panic".into(), "panic");
            XL_ERR_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(XL_ERR_NULL_POINTER, "null-pointer", format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(XL_ERR_NULL_POINTER, "null-pointer", format!("{what} is null")))
}

unsafe fn tokens<'a>(p: *const u32, len: usize, what: &str) -> Result<&'a [u32], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(deref(p, what)?, len))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    let s = CStr::from_ptr(deref(p, what)?)
        .to_str()
        .map_err(|_| fail(XL_ERR_INVALID_UTF8, "invalid-utf8", format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Copies `data` into a caller buffer of `cap` entries, always reporting the
/// full length through `out_len`.
unsafe fn write_tokens(data: &[u32], buf: *mut u32, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    *out(out_len, "out_len")? = data.len();
    if data.len() > cap {
        return Err(fail(
            XL_ERR_BUFFER_TOO_SMALL,
            "buffer-too-small",
            format!("need {} tokens, buffer holds {cap}", data.len()),
        ));
    }
    if !data.is_empty() {
        std::ptr::copy_nonoverlapping(data.as_ptr(), out(buf, "buf")?, data.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on this thread.
#[no_mangle]
pub extern "C" fn xl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |(m, _)| m.as_ptr()))
}

/// Machine-readable category of the last failure on this thread, or null,
/// with the same lifetime as the message.
#[no_mangle]
pub extern "C" fn xl_last_error_category() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |(_, c)| c.as_ptr()))
}

/// Generates a world with default settings apart from the given sizes.
///
/// # Safety
/// `out_world` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn xl_world_generate(
    num_langs: usize,
    alphabet: usize,
    train_prompts: usize,
    eval_prompts: usize,
    seed: u64,
    out_world: *mut *mut XlWorld,
) -> i32 {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        let cfg = WorldConfig {
            num_langs,
            alphabet,
            train_prompts,
            eval_prompts,
            ..WorldConfig::default()
        };
        let w = World::generate(cfg, seed)?;
        *slot = Box::into_raw(Box::new(XlWorld(w)));
        Ok(())
    })
}

/// Loads a world from a `tasks.jsonl` written by `gen-world`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out_world` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_world_load(tasks_path: *const c_char, out_world: *mut *mut XlWorld) -> i32 {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        let w = World::load_tasks(&path(tasks_path, "tasks_path")?)?;
        *slot = Box::into_raw(Box::new(XlWorld(w)));
        Ok(())
    })
}

/// # Safety
/// `world` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn xl_world_free(world: *mut XlWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// # Safety
/// `world` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn xl_world_vocab_size(world: *const XlWorld) -> usize {
    world.as_ref().map_or(0, |w| w.0.vocab.vocab_size())
}

/// Number of prompts in `split` (`XL_SPLIT_TRAIN` or `XL_SPLIT_EVAL`).
///
/// # Safety
/// `world` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn xl_world_num_prompts(world: *const XlWorld, split: i32) -> usize {
    world.as_ref().map_or(0, |w| match split {
        XL_SPLIT_TRAIN => w.0.train.len(),
        XL_SPLIT_EVAL => w.0.eval.len(),
        _ => 0,
    })
}

fn task(w: &XlWorld, split: i32, index: usize) -> Result<&xlingual::babel::TaskInstance, Failure> {
    let set = match split {
        XL_SPLIT_TRAIN => &w.0.train,
        XL_SPLIT_EVAL => &w.0.eval,
        _ => return Err(fail(XL_ERR_OUT_OF_RANGE, "out-of-range", format!("unknown split {split}"))),
    };
    set.tasks
        .get(index)
        .ok_or_else(|| fail(XL_ERR_OUT_OF_RANGE, "out-of-range", format!("prompt index {index} out of range")))
}

/// Writes the tokens of prompt `index` of `split` rendered in `lang`.
///
/// # Safety
/// `buf` must hold `cap` entries; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_world_prompt(
    world: *const XlWorld,
    split: i32,
    index: usize,
    lang: usize,
    buf: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let w = deref(world, "world")?;
        w.0.vocab.check_lang(lang)?;
        let t = task(w, split, index)?;
        write_tokens(&t.prompt(&w.0.vocab, lang), buf, cap, out_len)
    })
}

/// Oracle score in `[0, 1]` of `response` to `prompt`.
///
/// # Safety
/// Token pointers must hold the given number of entries.
#[no_mangle]
pub unsafe extern "C" fn xl_oracle_score(
    world: *const XlWorld,
    prompt: *const u32,
    prompt_len: usize,
    response: *const u32,
    response_len: usize,
    out_score: *mut f64,
) -> i32 {
    guard(|| {
        let w = deref(world, "world")?;
        let s = w
            .0
            .oracle()
            .score(tokens(prompt, prompt_len, "prompt")?, tokens(response, response_len, "response")?)?;
        *out(out_score, "out_score")? = s.value;
        Ok(())
    })
}

/// # Safety
/// `ckpt_path` must be a nul-terminated string; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn xl_model_load(ckpt_path: *const c_char, out_model: *mut *mut XlModel) -> i32 {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let m = load_checkpoint(&path(ckpt_path, "ckpt_path")?)?;
        *slot = Box::into_raw(Box::new(XlModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn xl_model_free(model: *mut XlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total `log π(response | prompt)`.
///
/// # Safety
/// Token pointers must hold the given number of entries.
#[no_mangle]
pub unsafe extern "C" fn xl_model_logprob(
    model: *const XlModel,
    prompt: *const u32,
    prompt_len: usize,
    response: *const u32,
    response_len: usize,
    out_logprob: *mut f64,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let lp = m
            .0
            .forward_logprob(tokens(prompt, prompt_len, "prompt")?, tokens(response, response_len, "response")?)?;
        *out(out_logprob, "out_logprob")? = lp.total;
        Ok(())
    })
}

/// Greedy continuation of `prompt`, at most `max_new_tokens` long.
///
/// # Safety
/// `buf` must hold `cap` entries; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_model_greedy(
    model: *const XlModel,
    prompt: *const u32,
    prompt_len: usize,
    max_new_tokens: usize,
    buf: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let y = greedy_decode(&m.0, tokens(prompt, prompt_len, "prompt")?, max_new_tokens)?;
        write_tokens(&y, buf, cap, out_len)
    })
}

/// Reward of `response` to training prompt `prompt_index` in `lang` under
/// `variant` (`XL_REWARD_RC`, `XL_REWARD_RM` or `XL_REWARD_RT`), with length
/// penalty `alpha` per token. `noise` and `seed` drive the `rt` translation;
/// `sample_id` selects its random stream.
///
/// # Safety
/// Handles must be live; `response` must hold `response_len` entries.
#[no_mangle]
pub unsafe extern "C" fn xl_reward(
    policy: *const XlModel,
    reference: *const XlModel,
    world: *const XlWorld,
    variant: i32,
    lang: usize,
    prompt_index: usize,
    sample_id: u32,
    response: *const u32,
    response_len: usize,
    beta: f64,
    alpha: f64,
    noise: f64,
    seed: u64,
    out_reward: *mut f64,
) -> i32 {
    guard(|| {
        let (p, r, w) = (deref(policy, "policy")?, deref(reference, "reference")?, deref(world, "world")?);
        w.0.vocab.check_lang(lang)?;
        let t = task(w, XL_SPLIT_TRAIN, prompt_index)?;
        let prompt = t.prompt(&w.0.vocab, lang);
        let prompt_en = t.prompt(&w.0.vocab, ENGLISH);
        let mut per_lang = vec![0.0; w.0.vocab.num_langs()];
        per_lang[lang] = alpha;
        let cfg = RewardConfig {
            beta,
            alpha: per_lang,
            optimize_alpha: false,
            translate_noise: noise,
            seed,
            ..RewardConfig::default()
        };
        cfg.validate()?;
        let input = RewardInput {
            lang,
            prompt_id: t.id,
            sample_id,
            prompt: &prompt,
            prompt_en: &prompt_en,
            response: tokens(response, response_len, "response")?,
        };
        let f = match variant {
            XL_REWARD_RC => reward_rc,
            XL_REWARD_RM => reward_rm,
            XL_REWARD_RT => reward_rt,
            _ => return Err(fail(XL_ERR_OUT_OF_RANGE, "out-of-range", format!("unknown reward variant {variant}"))),
        };
        *out(out_reward, "out_reward")? = f(&p.0, &r.0, &w.0.vocab, &input, &cfg)?;
        Ok(())
    })
}

/// Runs one pipeline stage (a subcommand name such as `"gen-world"`) in
/// `run_dir`. `config_path` may be null for the defaults.
///
/// # Safety
/// String arguments must be nul-terminated or, for `config_path`, null.
#[no_mangle]
pub unsafe extern "C" fn xl_run_stage(
    run_dir: *const c_char,
    config_path: *const c_char,
    stage: *const c_char,
    force: bool,
) -> i32 {
    guard(|| {
        let dir = path(run_dir, "run_dir")?;
        let cfg_path = if config_path.is_null() {
            None
        } else {
            Some(path(config_path, "config_path")?)
        };
        let name = path(stage, "stage")?;
        let stage: Stage = name.to_string_lossy().parse()?;
        let cfg = RunConfig::resolve(cfg_path.as_deref(), &Overrides::default())?;
        Runner::new(dir, cfg, force)?.run(stage)?;
        Ok(())
    })
}
