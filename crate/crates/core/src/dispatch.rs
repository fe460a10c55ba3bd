/// Runs a method call through an AVX2-compiled copy when the CPU has it.
/// The wrapped bodies only use element-wise operations and fixed-order
/// sums, so both copies produce identical results.
macro_rules! with_avx2 {
    ($recv:ident.$method:ident($($arg:expr),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx2")]
            unsafe fn fast<R>(f: impl FnOnce() -> R) -> R {
                f()
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected at runtime just above.
                unsafe { fast(|| $recv.$method($($arg),*)) }
            } else {
                $recv.$method($($arg),*)
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            $recv.$method($($arg),*)
        }
    }};
}
