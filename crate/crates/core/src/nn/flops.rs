/// Convolution FLOPs of one U-Net pass, summed level by level.
///
/// Level `i ∈ 1..=depth` of the contracting path costs
/// `k² (H/2ⁱ)(W/2ⁱ)(2ⁱ⁻¹C)(2ⁱC)`; level `i` of the expansive path costs
/// `k² (H/2ᴰ⁻ⁱ)(W/2ᴰ⁻ⁱ)(2ᴰ⁻ⁱC)(2ᴰ⁻ⁱ⁻¹C)`. Skip connections are ignored.
pub fn unet_flops(kernel: usize, h: usize, w: usize, channels: usize, depth: usize) -> u128 {
    let (k2, h, w, c) = (
        (kernel * kernel) as u128,
        h as u128,
        w as u128,
        channels as u128,
    );
    let mut total = 0u128;
    for i in 1..=depth as u32 {
        let s = 1u128 << i;
        total += k2 * (h / s) * (w / s) * (s / 2 * c) * (s * c);
        let j = depth as u32 - i;
        let s = 1u128 << j;
        // 2^(D-i-1) C written as (2^(D-i) C) / 2 so the last level stays exact
        total += k2 * (h / s) * (w / s) * (s * c) * (s * c) / 2;
    }
    total
}

/// FLOPs of a full `steps`-step reverse diffusion run.
pub fn estimate_flops(
    kernel: usize,
    steps: usize,
    h: usize,
    w: usize,
    channels: usize,
    depth: usize,
) -> u128 {
    steps as u128 * unet_flops(kernel, h, w, channels, depth)
}
