//! Allocator tuning for long training runs.

use std::sync::Once;

/// Asks glibc malloc to keep freed buffers inside the process.
///
/// A training step allocates and frees the same multi-megabyte activations
/// every iteration. With the default thresholds each of them is a fresh
/// `mmap`, and the page faults on first touch cost about a fifth of a step.
/// Safe to call more than once; a no-op on other platforms.
pub fn retain_freed_memory() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator parameters and is called
        // once before the buffers it affects are allocated.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        }
    });
}
