/* tslint:disable */
/* eslint-disable */

export function constellationScatter(order: number, snr_db: number, kappa_t: number, kappa_r: number, n: number, seed: number): Float64Array;

export function forwardPreview(x0: Uint8Array, xhat: Uint8Array, t: number, steps: number, beta_start: number, beta_end: number, seed: number): Uint8Array;

export function imagePsnr(a: Uint8Array, b: Uint8Array): number;

export function scheduleCurves(steps: number, beta_start: number, beta_end: number): Float64Array;

export function synthImage(seed: number): Uint8Array;

export function transmitImage(pixels: Uint8Array, order: number, repetition: number, snr_db: number, kappa_t: number, kappa_r: number, seed: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly constellationScatter: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly forwardPreview: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly imagePsnr: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly scheduleCurves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly synthImage: (a: number) => [number, number];
    readonly transmitImage: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
