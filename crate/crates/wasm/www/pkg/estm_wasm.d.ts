/* tslint:disable */
/* eslint-disable */

/**
 * Log-Mel, gate and gated log-Mel of one clip. Spectrogram values are
 * row-major `mel_bins x frames`.
 */
export class GateView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    enhanced(): Float64Array;
    gate(): Float64Array;
    mel(): Float64Array;
    readonly frames: number;
    readonly mel_bins: number;
}

/**
 * ROC vertices and areas for normal and anomalous score lists.
 */
export class RocView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    fpr(): Float64Array;
    tpr(): Float64Array;
    readonly auc: number;
    readonly pauc: number;
}

/**
 * Output of a one-channel, one-state scan run both ways.
 */
export class ScanView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    chunked(): Float64Array;
    delta(): Float64Array;
    /**
     * Largest absolute difference between the two kernels.
     */
    max_abs_diff(): number;
    sequential(): Float64Array;
}

/**
 * A hum at `hum_hz` with two harmonics and a broadband click train of
 * `burst_s` seconds starting at `burst_at_s`, gated with sharpness `alpha`.
 */
export function gate_tone_with_burst(seconds: number, hum_hz: number, burst_at_s: number, burst_s: number, burst_gain: number, mel_bins: number, alpha: number): GateView;

export function roc(normal: Float64Array, anomalous: Float64Array, p: number): RocView;

/**
 * Impulses at steps 0 and `len / 2`, with step size `delta` everywhere
 * except `delta_select` on `[select_at, select_at + select_len)`. A large
 * step there forgets the past and latches whatever arrives.
 */
export function scan_impulse(len: number, a_log: number, delta: number, delta_select: number, select_at: number, select_len: number, chunk: number): ScanView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_gateview_free: (a: number, b: number) => void;
    readonly __wbg_rocview_free: (a: number, b: number) => void;
    readonly __wbg_scanview_free: (a: number, b: number) => void;
    readonly gate_tone_with_burst: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly gateview_enhanced: (a: number) => [number, number];
    readonly gateview_frames: (a: number) => number;
    readonly gateview_gate: (a: number) => [number, number];
    readonly gateview_mel: (a: number) => [number, number];
    readonly gateview_mel_bins: (a: number) => number;
    readonly roc: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly rocview_auc: (a: number) => number;
    readonly rocview_fpr: (a: number) => [number, number];
    readonly rocview_pauc: (a: number) => number;
    readonly rocview_tpr: (a: number) => [number, number];
    readonly scan_impulse: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly scanview_chunked: (a: number) => [number, number];
    readonly scanview_delta: (a: number) => [number, number];
    readonly scanview_max_abs_diff: (a: number) => number;
    readonly scanview_sequential: (a: number) => [number, number];
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
