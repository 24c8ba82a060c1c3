//! Injectable time source. Every sleep in the daemon goes through a
//! [`Clock`], so tests can compress hours of monitoring into milliseconds.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, FixedOffset, Local, NaiveDateTime, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;

    /// Wall-clock time in the operator's timezone (directive archive names).
    fn local_now(&self) -> NaiveDateTime;

    /// Sleep for up to `dur`, waking early once `interrupt` returns true.
    /// Returns how long was actually slept.
    fn sleep(&self, dur: Duration, interrupt: &dyn Fn() -> bool) -> Duration;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

const REAL_SLICE: Duration = Duration::from_millis(100);

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn local_now(&self) -> NaiveDateTime {
        Local::now().naive_local()
    }

    fn sleep(&self, dur: Duration, interrupt: &dyn Fn() -> bool) -> Duration {
        let start = std::time::Instant::now();
        loop {
            let elapsed = start.elapsed();
            if elapsed >= dur || interrupt() {
                return elapsed.min(dur);
            }
            std::thread::sleep(REAL_SLICE.min(dur - elapsed));
        }
    }
}

type TimerAction = Box<dyn FnOnce() + Send>;

struct Timer {
    at: DateTime<Utc>,
    seq: u64,
    action: TimerAction,
}

struct SimInner {
    now: DateTime<Utc>,
    local_offset: FixedOffset,
    timers: Vec<Timer>,
    next_seq: u64,
    sleeps: Vec<Duration>,
    tick: Duration,
    real_pause: Duration,
}

/// Simulated clock. Sleeping advances virtual time in one-second ticks,
/// firing any scheduled timers and checking the interrupt after each tick.
#[derive(Clone)]
pub struct SimClock {
    inner: Arc<Mutex<SimInner>>,
}

impl SimClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        SimClock {
            inner: Arc::new(Mutex::new(SimInner {
                now: start,
                local_offset: FixedOffset::east_opt(0).expect("zero offset"),
                timers: Vec::new(),
                next_seq: 0,
                sleeps: Vec::new(),
                tick: Duration::from_secs(1),
                real_pause: Duration::ZERO,
            })),
        }
    }

    /// Local time = UTC + `offset_secs`.
    pub fn with_local_offset(self, offset_secs: i32) -> Self {
        self.inner.lock().unwrap().local_offset =
            FixedOffset::east_opt(offset_secs).expect("offset within a day");
        self
    }

    /// Real time spent per `sleep` call, giving real child processes a
    /// chance to make progress between simulated polls.
    pub fn with_real_pause(self, pause: Duration) -> Self {
        self.inner.lock().unwrap().real_pause = pause;
        self
    }

    /// Run `action` once virtual time reaches `at`.
    pub fn schedule_at(&self, at: DateTime<Utc>, action: impl FnOnce() + Send + 'static) {
        let mut g = self.inner.lock().unwrap();
        let seq = g.next_seq;
        g.next_seq += 1;
        g.timers.push(Timer {
            at,
            seq,
            action: Box::new(action),
        });
    }

    pub fn schedule_in(&self, after: Duration, action: impl FnOnce() + Send + 'static) {
        let at = self.now() + chrono::Duration::from_std(after).expect("duration in range");
        self.schedule_at(at, action);
    }

    /// Move virtual time forward, firing due timers.
    pub fn advance(&self, by: Duration) {
        let due = {
            let mut g = self.inner.lock().unwrap();
            g.now += chrono::Duration::from_std(by).expect("duration in range");
            let now = g.now;
            let (mut due, keep): (Vec<Timer>, Vec<Timer>) = g.timers.drain(..).partition(|t| t.at <= now);
            g.timers = keep;
            due.sort_by_key(|t| (t.at, t.seq));
            due
        };
        for t in due {
            (t.action)();
        }
    }

    /// Every completed `sleep` call's duration, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.inner.lock().unwrap().sleeps.clone()
    }

    pub fn clear_sleeps(&self) {
        self.inner.lock().unwrap().sleeps.clear();
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        self.inner.lock().unwrap().now
    }

    fn local_now(&self) -> NaiveDateTime {
        let g = self.inner.lock().unwrap();
        g.now.with_timezone(&g.local_offset).naive_local()
    }

    fn sleep(&self, dur: Duration, interrupt: &dyn Fn() -> bool) -> Duration {
        let (tick, pause) = {
            let g = self.inner.lock().unwrap();
            (g.tick, g.real_pause)
        };
        let mut slept = Duration::ZERO;
        if !interrupt() {
            while slept < dur {
                let step = tick.min(dur - slept);
                self.advance(step);
                slept += step;
                if interrupt() {
                    break;
                }
            }
        }
        self.inner.lock().unwrap().sleeps.push(slept);
        if !pause.is_zero() {
            std::thread::sleep(pause);
        }
        slept
    }
}
