//! Cumulative governance: aggregate budgets enforced through a state
//! authority (synchronous reservations), pre-allocated epoch quotas, or
//! signed state vouchers carried by the agent.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{Datelike, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::Constraint;
use crate::crypto::{KeyPair, PublicKey, SignedDocument};
use crate::model::{DenialCode, DenialReason};
use crate::value::{Decimal, Timestamp};

/// Default voucher freshness bound, in seconds.
pub const DEFAULT_DELTA_T_SECONDS: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarUnit {
    Day,
    Week,
    Month,
}

/// The accounting window a cumulative budget applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Period {
    /// Over the whole life of the credential.
    PerCredential,
    /// Events within the last `seconds` seconds.
    Rolling { seconds: i64 },
    /// The current UTC calendar day, ISO week (Monday start), or month.
    Calendar { unit: CalendarUnit },
}

impl Period {
    /// Earliest event time that still counts against the budget at `now`.
    /// `None` means every event counts.
    pub fn window_start(&self, now: Timestamp) -> Option<Timestamp> {
        match *self {
            Period::PerCredential => None,
            Period::Rolling { seconds } => Some(now.plus_seconds(-seconds)),
            Period::Calendar { unit } => {
                let t = now.utc();
                let day = t.date_naive();
                let start = match unit {
                    CalendarUnit::Day => day,
                    CalendarUnit::Week => day - Duration::days(i64::from(t.weekday().num_days_from_monday())),
                    CalendarUnit::Month => day.with_day(1).expect("day 1 exists"),
                };
                let midnight = Utc.from_utc_datetime(&start.and_hms_opt(0, 0, 0).expect("midnight exists"));
                Some(Timestamp::from_utc(midnight))
            }
        }
    }

    /// Whether an event at `at` counts within the window ending at `now`.
    /// Rolling windows exclude the event exactly `seconds` old.
    pub fn counts(&self, at: Timestamp, now: Timestamp) -> bool {
        match (self, self.window_start(now)) {
            (_, None) => true,
            (Period::Rolling { .. }, Some(start)) => at > start,
            (_, Some(start)) => at >= start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulativeLimitConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub field: String,
    pub budget: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency: Option<String>,
    pub period: Period,
    pub state_authority_pointer: String,
}

impl CumulativeLimitConstraint {
    pub fn validate(&self) -> Result<(), String> {
        if !self.budget.is_positive() {
            return Err("cumulative budget must be positive".into());
        }
        if !is_uri(&self.state_authority_pointer) {
            return Err(format!("state authority pointer {:?} is not a URI", self.state_authority_pointer));
        }
        if let Period::Rolling { seconds } = self.period {
            if seconds <= 0 {
                return Err("rolling window must be positive".into());
            }
        }
        Ok(())
    }

    /// Ledger account for spend under this constraint. Accounts are keyed by
    /// the chain root so that every delegate draws on the same budget.
    pub fn account(&self, root_digest: &str) -> String {
        crate::canonical::digest_of(&serde_json::json!({
            "root": root_digest,
            "field": self.field,
            "currency": self.currency,
            "period": self.period,
            "authority": self.state_authority_pointer,
        }))
    }
}

fn is_uri(text: &str) -> bool {
    let Some((scheme, rest)) = text.split_once(':') else {
        return false;
    };
    !rest.is_empty()
        && scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
        && !text.chars().any(|c| c.is_whitespace() || c.is_control())
}

/// Every parent cumulative limit must be matched by a child limit on the
/// same authority, currency and period with a budget no larger.
pub(crate) fn cumulative_narrows(children: &[&Constraint], parents: &[&Constraint]) -> Result<(), String> {
    let unwrap = |c: &&Constraint| match c {
        Constraint::CumulativeLimit(c) => Some(c.clone()),
        _ => None,
    };
    let kids: Vec<CumulativeLimitConstraint> = children.iter().filter_map(unwrap).collect();
    for p in parents.iter().filter_map(unwrap) {
        let covered = kids.iter().any(|c| {
            c.state_authority_pointer == p.state_authority_pointer
                && c.currency == p.currency
                && c.period == p.period
                && c.budget <= p.budget
        });
        if !covered {
            return Err(format!("budget {} at {} is not narrowed", p.budget, p.state_authority_pointer));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("over budget: {spent} spent, {requested} requested, budget {budget}")]
    OverBudget { spent: Decimal, requested: Decimal, budget: Decimal },
    #[error("state authority unreachable: {0}")]
    Unreachable(String),
}

/// One recorded reservation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub reservation_id: String,
    pub account: String,
    pub amount: Decimal,
    pub at: Timestamp,
}

/// Check-and-increment over a snapshot of an account's entries. Returns the
/// spend after the reservation. The budget boundary is inclusive.
pub fn reserve(entries: &[LedgerEntry], amount: &Decimal, budget: &Decimal, period: Period, now: Timestamp) -> Result<Decimal, StateError> {
    let spent = entries
        .iter()
        .filter(|e| period.counts(e.at, now))
        .fold(Decimal::zero(), |acc, e| acc.checked_add(&e.amount));
    let after = spent.checked_add(amount);
    if after > *budget {
        return Err(StateError::OverBudget {
            spent,
            requested: amount.clone(),
            budget: budget.clone(),
        });
    }
    Ok(after)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservationRequest {
    pub account: String,
    pub amount: Decimal,
    pub budget: Decimal,
    pub period: Period,
    pub now: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    pub reservation_id: String,
    pub spent_after: Decimal,
}

/// The reservation contract a state authority offers. `reserve` is the
/// linearization point for cumulative spend.
pub trait StateAuthority: Send + Sync {
    fn reserve(&self, request: &ReservationRequest) -> Result<Reservation, StateError>;
    fn release(&self, reservation_id: &str) -> Result<(), StateError>;
}

/// In-process authority. Can be switched offline to exercise fail-closed
/// behavior.
#[derive(Debug, Default)]
pub struct MemoryAuthority {
    accounts: Mutex<BTreeMap<String, Vec<LedgerEntry>>>,
    offline: AtomicBool,
    counter: AtomicU64,
}

impl MemoryAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_offline(&self, offline: bool) {
        self.offline.store(offline, Ordering::SeqCst);
    }

    pub fn spent(&self, account: &str) -> Decimal {
        let accounts = self.accounts.lock().unwrap();
        accounts
            .get(account)
            .map(|v| v.iter().fold(Decimal::zero(), |a, e| a.checked_add(&e.amount)))
            .unwrap_or_else(Decimal::zero)
    }
}

impl StateAuthority for MemoryAuthority {
    fn reserve(&self, r: &ReservationRequest) -> Result<Reservation, StateError> {
        if self.offline.load(Ordering::SeqCst) {
            return Err(StateError::Unreachable("authority is offline".into()));
        }
        let mut accounts = self.accounts.lock().unwrap();
        let entries = accounts.entry(r.account.clone()).or_default();
        let spent_after = reserve(entries, &r.amount, &r.budget, r.period, r.now)?;
        let reservation_id = format!("r{}", self.counter.fetch_add(1, Ordering::SeqCst) + 1);
        entries.push(LedgerEntry {
            reservation_id: reservation_id.clone(),
            account: r.account.clone(),
            amount: r.amount.clone(),
            at: r.now,
        });
        Ok(Reservation { reservation_id, spent_after })
    }

    fn release(&self, reservation_id: &str) -> Result<(), StateError> {
        let mut accounts = self.accounts.lock().unwrap();
        for entries in accounts.values_mut() {
            entries.retain(|e| e.reservation_id != reservation_id);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum FileRecord {
    Reserve(LedgerEntry),
    Release { reservation_id: String },
}

/// File-backed authority: an append-only log of reservation records, one
/// canonical JSON object per line. Serialized within this process.
#[derive(Debug)]
pub struct FileAuthority {
    path: PathBuf,
    lock: Mutex<()>,
}

impl FileAuthority {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileAuthority {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    fn load(&self, account: &str) -> Result<(Vec<LedgerEntry>, usize), StateError> {
        let file = match std::fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
            Err(e) => return Err(StateError::Unreachable(e.to_string())),
        };
        let mut entries: Vec<LedgerEntry> = Vec::new();
        let mut lines = 0;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| StateError::Unreachable(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;
            let record: FileRecord = crate::canonical::from_bytes(line.as_bytes())
                .map_err(|e| StateError::Unreachable(format!("corrupt state store: {e}")))?;
            match record {
                FileRecord::Reserve(e) if e.account == account => entries.push(e),
                FileRecord::Reserve(_) => {}
                FileRecord::Release { reservation_id } => entries.retain(|e| e.reservation_id != reservation_id),
            }
        }
        Ok((entries, lines))
    }

    fn append(&self, record: &FileRecord) -> Result<(), StateError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| StateError::Unreachable(e.to_string()))?;
        let mut line = crate::canonical::to_bytes(record);
        line.push(b'\n');
        file.write_all(&line).map_err(|e| StateError::Unreachable(e.to_string()))
    }
}

impl StateAuthority for FileAuthority {
    fn reserve(&self, r: &ReservationRequest) -> Result<Reservation, StateError> {
        let _guard = self.lock.lock().unwrap();
        let (entries, lines) = self.load(&r.account)?;
        let spent_after = reserve(&entries, &r.amount, &r.budget, r.period, r.now)?;
        let reservation_id = format!("r{}-{}", lines + 1, &r.account[..8.min(r.account.len())]);
        self.append(&FileRecord::Reserve(LedgerEntry {
            reservation_id: reservation_id.clone(),
            account: r.account.clone(),
            amount: r.amount.clone(),
            at: r.now,
        }))?;
        Ok(Reservation { reservation_id, spent_after })
    }

    fn release(&self, reservation_id: &str) -> Result<(), StateError> {
        let _guard = self.lock.lock().unwrap();
        self.append(&FileRecord::Release {
            reservation_id: reservation_id.into(),
        })
    }
}

/// State authorities reachable from this evaluator, by pointer.
#[derive(Clone, Default)]
pub struct AuthorityDirectory {
    authorities: BTreeMap<String, Arc<dyn StateAuthority>>,
}

impl AuthorityDirectory {
    pub fn insert(&mut self, pointer: &str, authority: Arc<dyn StateAuthority>) {
        self.authorities.insert(pointer.to_string(), authority);
    }

    pub fn get(&self, pointer: &str) -> Option<&Arc<dyn StateAuthority>> {
        self.authorities.get(pointer)
    }
}

impl std::fmt::Debug for AuthorityDirectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.authorities.keys()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// No state available: cumulative constraints cannot be honored.
    #[default]
    Stateless,
    /// Local pre-allocated epoch quotas.
    EpochBound,
    /// Atomic reservation at the state authority.
    Synchronous,
    /// Agent-carried signed state vouchers.
    Voucher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochQuota {
    pub enforcer_id: String,
    pub epoch: i64,
    pub allocation: Decimal,
    pub spent: Decimal,
    pub epoch_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochAllocation {
    pub quotas: Vec<EpochQuota>,
    /// Worst-case spend if every enforcer exhausts its slice concurrently.
    pub max_concurrent_exposure: Decimal,
}

/// Splits a budget evenly across enforcers (largest remainder at the
/// budget's own precision).
pub fn allocate_epoch_quotas(budget: &Decimal, enforcers: &[String], epoch_seconds: i64, epoch: i64) -> EpochAllocation {
    let shares = if enforcers.is_empty() {
        Vec::new()
    } else {
        budget.split_even(enforcers.len())
    };
    let quotas: Vec<EpochQuota> = enforcers
        .iter()
        .zip(shares)
        .map(|(id, allocation)| EpochQuota {
            enforcer_id: id.clone(),
            epoch,
            allocation,
            spent: Decimal::zero(),
            epoch_seconds,
        })
        .collect();
    let exposure = quotas.iter().fold(Decimal::zero(), |a, q| a.checked_add(&q.allocation));
    EpochAllocation {
        quotas,
        max_concurrent_exposure: exposure,
    }
}

pub fn epoch_index(now: Timestamp, epoch_seconds: i64) -> i64 {
    now.unix_seconds().div_euclid(epoch_seconds.max(1))
}

/// Epoch-tier settings: the enforcers sharing each budget and the epoch
/// length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSettings {
    pub enforcers: Vec<String>,
    pub epoch_seconds: i64,
}

/// This enforcer's quotas, one per account. Spend resets when the epoch
/// index changes.
#[derive(Debug, Default)]
pub struct EpochLedger {
    quotas: Mutex<HashMap<String, EpochQuota>>,
}

impl EpochLedger {
    pub fn spend(
        &self,
        account: &str,
        enforcer_id: &str,
        settings: &EpochSettings,
        budget: &Decimal,
        amount: &Decimal,
        now: Timestamp,
    ) -> Result<Decimal, StateError> {
        let epoch = epoch_index(now, settings.epoch_seconds);
        let allocation = allocate_epoch_quotas(budget, &settings.enforcers, settings.epoch_seconds, epoch);
        let Some(fresh) = allocation.quotas.into_iter().find(|q| q.enforcer_id == enforcer_id) else {
            return Err(StateError::Unreachable(format!("{enforcer_id} holds no epoch allocation")));
        };
        let mut quotas = self.quotas.lock().unwrap();
        let quota = quotas.entry(account.to_string()).or_insert_with(|| fresh.clone());
        if quota.epoch != epoch {
            *quota = fresh;
        }
        let after = quota.spent.checked_add(amount);
        if after > quota.allocation {
            return Err(StateError::OverBudget {
                spent: quota.spent.clone(),
                requested: amount.clone(),
                budget: quota.allocation.clone(),
            });
        }
        quota.spent = after.clone();
        Ok(after)
    }

    pub fn refund(&self, account: &str, amount: &Decimal) {
        if let Some(q) = self.quotas.lock().unwrap().get_mut(account) {
            q.spent = q.spent.checked_sub(amount);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVoucher {
    pub account: String,
    pub sequence: u64,
    pub observed_at: Timestamp,
    pub budget: Decimal,
    pub spent: Decimal,
    pub remaining: Decimal,
    /// State authority pointer the voucher is issued under.
    pub authority: String,
    /// Digest of the predecessor's signature value; absent on the first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_signature: Option<String>,
}

pub type SignedVoucher = SignedDocument<StateVoucher>;

fn signature_digest(v: &SignedVoucher) -> String {
    let value = v.document.get(crate::crypto::SIGNATURE_FIELD).and_then(|s| s.get("value")).cloned().unwrap_or_default();
    crate::canonical::digest_of(&value)
}

pub fn init_voucher(account: &str, budget: &Decimal, authority: &str, key: &KeyPair, now: Timestamp) -> SignedVoucher {
    SignedVoucher::sign(
        StateVoucher {
            account: account.into(),
            sequence: 1,
            observed_at: now,
            budget: budget.clone(),
            spent: Decimal::zero(),
            remaining: budget.clone(),
            authority: authority.into(),
            prev_signature: None,
        },
        key,
    )
}

/// Successor voucher recording `amount` more spend.
pub fn update_voucher(prev: &SignedVoucher, amount: &Decimal, key: &KeyPair, now: Timestamp) -> Result<SignedVoucher, StateError> {
    let p = &prev.body;
    if *amount > p.remaining {
        return Err(StateError::OverBudget {
            spent: p.spent.clone(),
            requested: amount.clone(),
            budget: p.budget.clone(),
        });
    }
    Ok(SignedVoucher::sign(
        StateVoucher {
            sequence: p.sequence + 1,
            observed_at: now,
            spent: p.spent.checked_add(amount),
            remaining: p.remaining.checked_sub(amount),
            prev_signature: Some(signature_digest(prev)),
            ..p.clone()
        },
        key,
    ))
}

/// Highest voucher sequence accepted per account at this receiver.
#[derive(Debug, Default)]
pub struct SequenceMemory {
    high_water: Mutex<HashMap<String, u64>>,
}

impl SequenceMemory {
    pub fn get(&self, account: &str) -> Option<u64> {
        self.high_water.lock().unwrap().get(account).copied()
    }

    /// Atomically accepts `sequence` if it exceeds the recorded high water.
    pub fn advance(&self, account: &str, sequence: u64) -> bool {
        let mut map = self.high_water.lock().unwrap();
        match map.get(account) {
            Some(&hw) if sequence <= hw => false,
            _ => {
                map.insert(account.to_string(), sequence);
                true
            }
        }
    }
}

/// Trust inputs for voucher verification.
pub struct VoucherPolicy<'a> {
    /// Whether the registry permits this authority pointer.
    pub authority_permitted: &'a dyn Fn(&str) -> bool,
    /// Keys allowed to sign vouchers for an authority pointer.
    pub signer_keys: &'a dyn Fn(&str) -> Vec<PublicKey>,
    pub now: Timestamp,
    pub delta_t_seconds: i64,
}

fn state_denial(code: DenialCode, detail: impl Into<String>) -> DenialReason {
    DenialReason::new(code, detail)
}

/// Verifies a voucher chain (oldest first) and returns the newest state.
/// Does not record the sequence; callers commit via [`SequenceMemory`].
pub fn verify_voucher_chain(
    vouchers: &[SignedVoucher],
    constraint: &CumulativeLimitConstraint,
    account: &str,
    memory: &SequenceMemory,
    policy: &VoucherPolicy<'_>,
) -> Result<StateVoucher, DenialReason> {
    let Some(newest) = vouchers.last() else {
        return Err(state_denial(DenialCode::StateAuthorityUnreachable, "no state voucher presented"));
    };
    for v in vouchers {
        let b = &v.body;
        if b.authority != constraint.state_authority_pointer || !(policy.authority_permitted)(&b.authority) {
            return Err(state_denial(
                DenialCode::StateAuthorityUnpermitted,
                format!("voucher authority {} is not permitted", b.authority),
            ));
        }
        let keys = (policy.signer_keys)(&b.authority);
        if let Err(e) = v.verify_by(&keys) {
            return Err(state_denial(DenialCode::StateSignatureInvalid, format!("voucher {}: {e}", b.sequence)));
        }
        if b.account != account {
            return Err(state_denial(DenialCode::StateSignatureInvalid, "voucher is bound to a different account"));
        }
    }
    for pair in vouchers.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.body.sequence <= a.body.sequence {
            return Err(state_denial(
                DenialCode::StateSequenceInvalid,
                format!("sequence {} follows {}", b.body.sequence, a.body.sequence),
            ));
        }
        if b.body.prev_signature.as_deref() != Some(signature_digest(a).as_str()) {
            return Err(state_denial(DenialCode::StateSequenceInvalid, "voucher chain link is broken"));
        }
        if b.body.spent < a.body.spent {
            return Err(state_denial(DenialCode::StateSequenceInvalid, "recorded spend decreased"));
        }
    }
    let n = &newest.body;
    if let Some(hw) = memory.get(account) {
        if n.sequence <= hw {
            return Err(state_denial(
                DenialCode::StateSequenceInvalid,
                format!("sequence {} was already superseded by {hw}", n.sequence),
            ));
        }
    }
    let age = policy.now.seconds_since(&n.observed_at);
    if age < 0 || age > policy.delta_t_seconds {
        return Err(state_denial(
            DenialCode::StateStale,
            format!("voucher age {age}s is outside 0..={}s", policy.delta_t_seconds),
        ));
    }
    for v in vouchers {
        let b = &v.body;
        if b.spent.checked_add(&b.remaining) != b.budget || b.spent.is_negative() || b.remaining.is_negative() {
            return Err(state_denial(DenialCode::StateSequenceInvalid, "voucher arithmetic is inconsistent"));
        }
        if b.budget > constraint.budget {
            return Err(state_denial(DenialCode::StateSequenceInvalid, "voucher budget exceeds the credential's"));
        }
    }
    Ok(n.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    fn ts(s: &str) -> Timestamp {
        s.parse().unwrap()
    }

    fn constraint() -> CumulativeLimitConstraint {
        CumulativeLimitConstraint {
            id: None,
            field: "core.amount".into(),
            budget: d("50000"),
            currency: Some("USD".into()),
            period: Period::Calendar { unit: CalendarUnit::Week },
            state_authority_pointer: "urn:ledger:acme".into(),
        }
    }

    fn entry(amount: &str, at: &str) -> LedgerEntry {
        LedgerEntry {
            reservation_id: String::new(),
            account: "a".into(),
            amount: d(amount),
            at: ts(at),
        }
    }

    #[test]
    fn reserve_boundary_is_inclusive() {
        let now = ts("2026-04-18T12:00:00Z");
        let e = [entry("48000", "2026-04-17T00:00:00Z")];
        assert_eq!(reserve(&e, &d("2000"), &d("50000"), Period::PerCredential, now).unwrap(), d("50000"));
        let e = [entry("50000", "2026-04-17T00:00:00Z")];
        assert!(matches!(reserve(&e, &d("1"), &d("50000"), Period::PerCredential, now), Err(StateError::OverBudget { .. })));
    }

    #[test]
    fn windows() {
        let now = ts("2026-04-18T12:00:00Z"); // a Saturday
        let week = Period::Calendar { unit: CalendarUnit::Week };
        assert_eq!(week.window_start(now), Some(ts("2026-04-13T00:00:00Z")));
        assert!(week.counts(ts("2026-04-13T00:00:00Z"), now));
        assert!(!week.counts(ts("2026-04-12T23:59:59Z"), now));
        let month = Period::Calendar { unit: CalendarUnit::Month };
        assert_eq!(month.window_start(now), Some(ts("2026-04-01T00:00:00Z")));
        let rolling = Period::Rolling { seconds: 3600 };
        assert!(rolling.counts(ts("2026-04-18T11:00:01Z"), now));
        assert!(!rolling.counts(ts("2026-04-18T11:00:00Z"), now));
        let e = [entry("40000", "2026-04-10T00:00:00Z")];
        assert!(reserve(&e, &d("50000"), &d("50000"), week, now).is_ok());
    }

    #[test]
    fn concurrent_reserves_never_exceed_budget() {
        let auth = Arc::new(MemoryAuthority::new());
        let now = ts("2026-04-18T12:00:00Z");
        let handles: Vec<_> = (0..2)
            .map(|_| {
                let auth = auth.clone();
                thread::spawn(move || {
                    auth.reserve(&ReservationRequest {
                        account: "acct".into(),
                        amount: d("30000"),
                        budget: d("50000"),
                        period: Period::PerCredential,
                        now,
                    })
                    .is_ok()
                })
            })
            .collect();
        let granted = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
        assert_eq!(granted, 1);
        assert_eq!(auth.spent("acct"), d("30000"));
    }

    #[test]
    fn file_authority_persists_and_releases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.jsonl");
        let req = ReservationRequest {
            account: "acct-0001".into(),
            amount: d("30000"),
            budget: d("50000"),
            period: Period::PerCredential,
            now: ts("2026-04-18T12:00:00Z"),
        };
        let first = FileAuthority::new(&path).reserve(&req).unwrap();
        assert!(FileAuthority::new(&path).reserve(&req).is_err());
        FileAuthority::new(&path).release(&first.reservation_id).unwrap();
        assert_eq!(FileAuthority::new(&path).reserve(&req).unwrap().spent_after, d("30000"));
    }

    #[test]
    fn epoch_allocations() {
        let ids = |n: usize| (0..n).map(|i| format!("e{i}")).collect::<Vec<_>>();
        let a = allocate_epoch_quotas(&d("50000"), &ids(5), 86_400, 0);
        assert!(a.quotas.iter().all(|q| q.allocation == d("10000")));
        let a = allocate_epoch_quotas(&d("50000"), &ids(1), 86_400, 0);
        assert_eq!(a.quotas[0].allocation, d("50000"));
        let a = allocate_epoch_quotas(&d("100"), &ids(3), 86_400, 0);
        let got: Vec<_> = a.quotas.iter().map(|q| q.allocation.to_string()).collect();
        assert_eq!(got, ["34", "33", "33"]);
        assert_eq!(a.max_concurrent_exposure, d("100"));
    }

    #[test]
    fn epoch_ledger_resets_at_boundary() {
        let ledger = EpochLedger::default();
        let settings = EpochSettings {
            enforcers: vec!["e0".into(), "e1".into()],
            epoch_seconds: 86_400,
        };
        let spend = |amount: &str, at: &str| ledger.spend("acct", "e0", &settings, &d("1000"), &d(amount), ts(at));
        assert!(spend("500", "2026-04-18T00:00:00Z").is_ok());
        assert!(spend("1", "2026-04-18T23:59:59Z").is_err());
        assert!(spend("500", "2026-04-19T00:00:00Z").is_ok());
        assert!(ledger.spend("acct", "stranger", &settings, &d("1000"), &d("1"), ts("2026-04-19T00:00:00Z")).is_err());
    }

    struct VoucherFixture {
        key: KeyPair,
        memory: SequenceMemory,
        c: CumulativeLimitConstraint,
    }

    impl VoucherFixture {
        fn new() -> Self {
            VoucherFixture {
                key: KeyPair::from_label("enforcer"),
                memory: SequenceMemory::default(),
                c: constraint(),
            }
        }

        fn chain(&self, start: &str, amounts: &[&str]) -> Vec<SignedVoucher> {
            let mut t = ts(start);
            let mut out = vec![init_voucher("acct", &d("50000"), "urn:ledger:acme", &self.key, t)];
            for a in amounts {
                t = t.plus_seconds(60);
                let next = update_voucher(out.last().unwrap(), &d(a), &self.key, t).unwrap();
                out.push(next);
            }
            out
        }

        fn verify(&self, chain: &[SignedVoucher], now: &str) -> Result<StateVoucher, DenialCode> {
            let key = self.key.public();
            let keys = move |_: &str| vec![key];
            let permitted = |p: &str| p == "urn:ledger:acme";
            let policy = VoucherPolicy {
                authority_permitted: &permitted,
                signer_keys: &keys,
                now: ts(now),
                delta_t_seconds: DEFAULT_DELTA_T_SECONDS,
            };
            verify_voucher_chain(chain, &self.c, "acct", &self.memory, &policy).map_err(|r| r.code)
        }
    }

    #[test]
    fn voucher_chain_accepts_and_tracks_spend() {
        let f = VoucherFixture::new();
        let chain = f.chain("2026-04-18T12:00:00Z", &["1000", "2000"]);
        let state = f.verify(&chain, "2026-04-18T12:03:00Z").unwrap();
        assert_eq!((state.sequence, state.spent.to_string(), state.remaining.to_string()), (3, "3000".into(), "47000".into()));
        assert!(update_voucher(chain.last().unwrap(), &d("47001"), &f.key, ts("2026-04-18T12:04:00Z")).is_err());
    }

    #[test]
    fn voucher_replay_and_staleness() {
        let f = VoucherFixture::new();
        let chain = f.chain("2026-04-18T12:00:00Z", &["1000", "2000"]);
        let state = f.verify(&chain, "2026-04-18T12:02:00Z").unwrap();
        assert!(f.memory.advance("acct", state.sequence));
        assert_eq!(f.verify(&chain, "2026-04-18T12:02:00Z"), Err(DenialCode::StateSequenceInvalid));
        assert_eq!(f.verify(&chain[..2], "2026-04-18T12:02:00Z"), Err(DenialCode::StateSequenceInvalid));

        let g = VoucherFixture::new();
        let chain = g.chain("2026-04-18T12:00:00Z", &[]);
        assert!(g.verify(&chain, "2026-04-18T12:05:00Z").is_ok());
        assert_eq!(g.verify(&chain, "2026-04-18T12:05:01Z"), Err(DenialCode::StateStale));
    }

    #[test]
    fn voucher_signatures_and_authority() {
        let f = VoucherFixture::new();
        let mut chain = f.chain("2026-04-18T12:00:00Z", &["1000"]);
        let forged = update_voucher(&chain[1], &d("1"), &KeyPair::from_label("mallory"), ts("2026-04-18T12:02:00Z")).unwrap();
        chain.push(forged);
        assert_eq!(f.verify(&chain, "2026-04-18T12:02:00Z"), Err(DenialCode::StateSignatureInvalid));

        let other = SignedVoucher::sign(
            StateVoucher {
                authority: "urn:ledger:rogue".into(),
                ..f.chain("2026-04-18T12:00:00Z", &[])[0].body.clone()
            },
            &f.key,
        );
        assert_eq!(f.verify(&[other], "2026-04-18T12:00:00Z"), Err(DenialCode::StateAuthorityUnpermitted));
    }

    #[test]
    fn cumulative_attenuation() {
        let parent = Constraint::CumulativeLimit(constraint());
        let mut lower = constraint();
        lower.budget = d("20000");
        let mut higher = constraint();
        higher.budget = d("60000");
        let mut other_period = constraint();
        other_period.period = Period::PerCredential;
        assert!(cumulative_narrows(&[&Constraint::CumulativeLimit(lower)], &[&parent]).is_ok());
        assert!(cumulative_narrows(&[&Constraint::CumulativeLimit(higher)], &[&parent]).is_err());
        assert!(cumulative_narrows(&[&Constraint::CumulativeLimit(other_period)], &[&parent]).is_err());
    }

    #[test]
    fn constraint_validation() {
        let mut c = constraint();
        assert!(c.validate().is_ok());
        c.budget = d("0");
        assert!(c.validate().is_err());
        let mut c = constraint();
        c.state_authority_pointer = "not a uri".into();
        assert!(c.validate().is_err());
    }
}
