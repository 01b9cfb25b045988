//! Fault-injection hook used to validate that the self-test suite actually
//! catches broken derivative rules. Not part of the public contract.

use std::sync::atomic::{AtomicBool, Ordering};

static VJP_SIGN_FAULT: AtomicBool = AtomicBool::new(false);

/// Arm or disarm a deliberate sign error in the multiply backward rule.
#[doc(hidden)]
pub fn set_vjp_sign_fault(armed: bool) {
    VJP_SIGN_FAULT.store(armed, Ordering::SeqCst);
}

#[doc(hidden)]
pub fn vjp_sign_fault() -> bool {
    VJP_SIGN_FAULT.load(Ordering::SeqCst)
}
