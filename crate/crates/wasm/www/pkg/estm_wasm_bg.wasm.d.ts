/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_gateview_free: (a: number, b: number) => void;
export const __wbg_rocview_free: (a: number, b: number) => void;
export const __wbg_scanview_free: (a: number, b: number) => void;
export const gate_tone_with_burst: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const gateview_enhanced: (a: number) => [number, number];
export const gateview_frames: (a: number) => number;
export const gateview_gate: (a: number) => [number, number];
export const gateview_mel: (a: number) => [number, number];
export const gateview_mel_bins: (a: number) => number;
export const roc: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const rocview_auc: (a: number) => number;
export const rocview_fpr: (a: number) => [number, number];
export const rocview_pauc: (a: number) => number;
export const rocview_tpr: (a: number) => [number, number];
export const scan_impulse: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const scanview_chunked: (a: number) => [number, number];
export const scanview_delta: (a: number) => [number, number];
export const scanview_max_abs_diff: (a: number) => number;
export const scanview_sequential: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
