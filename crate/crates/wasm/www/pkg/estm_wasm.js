/* @ts-self-types="./estm_wasm.d.ts" */

/**
 * Log-Mel, gate and gated log-Mel of one clip. Spectrogram values are
 * row-major `mel_bins x frames`.
 */
export class GateView {
    static __wrap(ptr) {
        const obj = Object.create(GateView.prototype);
        obj.__wbg_ptr = ptr;
        GateViewFinalization.register(obj, obj.__wbg_ptr, obj);
        return obj;
    }
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        GateViewFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_gateview_free(ptr, 0);
    }
    /**
     * @returns {Float64Array}
     */
    enhanced() {
        const ret = wasm.gateview_enhanced(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * @returns {number}
     */
    get frames() {
        const ret = wasm.gateview_frames(this.__wbg_ptr);
        return ret >>> 0;
    }
    /**
     * @returns {Float64Array}
     */
    gate() {
        const ret = wasm.gateview_gate(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * @returns {number}
     */
    get mel_bins() {
        const ret = wasm.gateview_mel_bins(this.__wbg_ptr);
        return ret >>> 0;
    }
    /**
     * @returns {Float64Array}
     */
    mel() {
        const ret = wasm.gateview_mel(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
}
if (Symbol.dispose) GateView.prototype[Symbol.dispose] = GateView.prototype.free;

/**
 * ROC vertices and areas for normal and anomalous score lists.
 */
export class RocView {
    static __wrap(ptr) {
        const obj = Object.create(RocView.prototype);
        obj.__wbg_ptr = ptr;
        RocViewFinalization.register(obj, obj.__wbg_ptr, obj);
        return obj;
    }
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        RocViewFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_rocview_free(ptr, 0);
    }
    /**
     * @returns {number}
     */
    get auc() {
        const ret = wasm.rocview_auc(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {Float64Array}
     */
    fpr() {
        const ret = wasm.rocview_fpr(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * @returns {number}
     */
    get pauc() {
        const ret = wasm.rocview_pauc(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {Float64Array}
     */
    tpr() {
        const ret = wasm.rocview_tpr(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
}
if (Symbol.dispose) RocView.prototype[Symbol.dispose] = RocView.prototype.free;

/**
 * Output of a one-channel, one-state scan run both ways.
 */
export class ScanView {
    static __wrap(ptr) {
        const obj = Object.create(ScanView.prototype);
        obj.__wbg_ptr = ptr;
        ScanViewFinalization.register(obj, obj.__wbg_ptr, obj);
        return obj;
    }
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        ScanViewFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_scanview_free(ptr, 0);
    }
    /**
     * @returns {Float64Array}
     */
    chunked() {
        const ret = wasm.scanview_chunked(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * @returns {Float64Array}
     */
    delta() {
        const ret = wasm.scanview_delta(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * Largest absolute difference between the two kernels.
     * @returns {number}
     */
    max_abs_diff() {
        const ret = wasm.scanview_max_abs_diff(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {Float64Array}
     */
    sequential() {
        const ret = wasm.scanview_sequential(this.__wbg_ptr);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
}
if (Symbol.dispose) ScanView.prototype[Symbol.dispose] = ScanView.prototype.free;

/**
 * A hum at `hum_hz` with two harmonics and a broadband click train of
 * `burst_s` seconds starting at `burst_at_s`, gated with sharpness `alpha`.
 * @param {number} seconds
 * @param {number} hum_hz
 * @param {number} burst_at_s
 * @param {number} burst_s
 * @param {number} burst_gain
 * @param {number} mel_bins
 * @param {number} alpha
 * @returns {GateView}
 */
export function gate_tone_with_burst(seconds, hum_hz, burst_at_s, burst_s, burst_gain, mel_bins, alpha) {
    const ret = wasm.gate_tone_with_burst(seconds, hum_hz, burst_at_s, burst_s, burst_gain, mel_bins, alpha);
    if (ret[2]) {
        throw takeFromExternrefTable0(ret[1]);
    }
    return GateView.__wrap(ret[0]);
}

/**
 * @param {Float64Array} normal
 * @param {Float64Array} anomalous
 * @param {number} p
 * @returns {RocView}
 */
export function roc(normal, anomalous, p) {
    const ptr0 = passArrayF64ToWasm0(normal, wasm.__wbindgen_malloc);
    const len0 = WASM_VECTOR_LEN;
    const ptr1 = passArrayF64ToWasm0(anomalous, wasm.__wbindgen_malloc);
    const len1 = WASM_VECTOR_LEN;
    const ret = wasm.roc(ptr0, len0, ptr1, len1, p);
    if (ret[2]) {
        throw takeFromExternrefTable0(ret[1]);
    }
    return RocView.__wrap(ret[0]);
}

/**
 * Impulses at steps 0 and `len / 2`, with step size `delta` everywhere
 * except `delta_select` on `[select_at, select_at + select_len)`. A large
 * step there forgets the past and latches whatever arrives.
 * @param {number} len
 * @param {number} a_log
 * @param {number} delta
 * @param {number} delta_select
 * @param {number} select_at
 * @param {number} select_len
 * @param {number} chunk
 * @returns {ScanView}
 */
export function scan_impulse(len, a_log, delta, delta_select, select_at, select_len, chunk) {
    const ret = wasm.scan_impulse(len, a_log, delta, delta_select, select_at, select_len, chunk);
    if (ret[2]) {
        throw takeFromExternrefTable0(ret[1]);
    }
    return ScanView.__wrap(ret[0]);
}
function __wbg_get_imports() {
    const import0 = {
        __proto__: null,
        __wbg_Error_30c8987f7c2ed4e2: function(arg0, arg1) {
            const ret = Error(getStringFromWasm0(arg0, arg1));
            return ret;
        },
        __wbg___wbindgen_throw_41e9ee4f547fc59a: function(arg0, arg1) {
            throw new Error(getStringFromWasm0(arg0, arg1));
        },
        __wbindgen_init_externref_table: function() {
            const table = wasm.__wbindgen_externrefs;
            const offset = table.grow(4);
            table.set(0, undefined);
            table.set(offset + 0, undefined);
            table.set(offset + 1, null);
            table.set(offset + 2, true);
            table.set(offset + 3, false);
        },
    };
    return {
        __proto__: null,
        "./estm_wasm_bg.js": import0,
    };
}

const GateViewFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_gateview_free(ptr, 1));
const RocViewFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_rocview_free(ptr, 1));
const ScanViewFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_scanview_free(ptr, 1));

function getArrayF64FromWasm0(ptr, len) {
    ptr = ptr >>> 0;
    return getFloat64ArrayMemory0().subarray(ptr / 8, ptr / 8 + len);
}

let cachedFloat64ArrayMemory0 = null;
function getFloat64ArrayMemory0() {
    if (cachedFloat64ArrayMemory0 === null || cachedFloat64ArrayMemory0.byteLength === 0) {
        cachedFloat64ArrayMemory0 = new Float64Array(wasm.memory.buffer);
    }
    return cachedFloat64ArrayMemory0;
}

function getStringFromWasm0(ptr, len) {
    return decodeText(ptr >>> 0, len);
}

let cachedUint8ArrayMemory0 = null;
function getUint8ArrayMemory0() {
    if (cachedUint8ArrayMemory0 === null || cachedUint8ArrayMemory0.byteLength === 0) {
        cachedUint8ArrayMemory0 = new Uint8Array(wasm.memory.buffer);
    }
    return cachedUint8ArrayMemory0;
}

function passArrayF64ToWasm0(arg, malloc) {
    const ptr = malloc(arg.length * 8, 8) >>> 0;
    getFloat64ArrayMemory0().set(arg, ptr / 8);
    WASM_VECTOR_LEN = arg.length;
    return ptr;
}

function takeFromExternrefTable0(idx) {
    const value = wasm.__wbindgen_externrefs.get(idx);
    wasm.__externref_table_dealloc(idx);
    return value;
}

let cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
cachedTextDecoder.decode();
const MAX_SAFARI_DECODE_BYTES = 2146435072;
let numBytesDecoded = 0;
function decodeText(ptr, len) {
    numBytesDecoded += len;
    if (numBytesDecoded >= MAX_SAFARI_DECODE_BYTES) {
        cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
        cachedTextDecoder.decode();
        numBytesDecoded = len;
    }
    return cachedTextDecoder.decode(getUint8ArrayMemory0().subarray(ptr, ptr + len));
}

let WASM_VECTOR_LEN = 0;

let wasmModule, wasmInstance, wasm;
function __wbg_finalize_init(instance, module) {
    wasmInstance = instance;
    wasm = instance.exports;
    wasmModule = module;
    cachedFloat64ArrayMemory0 = null;
    cachedUint8ArrayMemory0 = null;
    wasm.__wbindgen_start();
    return wasm;
}

async function __wbg_load(module, imports) {
    if (typeof Response === 'function' && module instanceof Response) {
        if (!module.ok) {
            throw new Error(`failed to fetch Wasm: ${module.status} ${module.statusText} fetching '${module.url}'`);
        }

        if (typeof WebAssembly.instantiateStreaming === 'function') {
            try {
                return await WebAssembly.instantiateStreaming(module, imports);
            } catch (e) {
                const validResponse = expectedResponseType(module.type);

                if (validResponse && module.headers.get('Content-Type') !== 'application/wasm') {
                    console.warn("`WebAssembly.instantiateStreaming` failed because your server does not serve Wasm with `application/wasm` MIME type. Falling back to `WebAssembly.instantiate` which is slower. Original error:\n", e);

                } else { throw e; }
            }
        }

        const bytes = await module.arrayBuffer();
        return await WebAssembly.instantiate(bytes, imports);
    } else {
        const instance = await WebAssembly.instantiate(module, imports);

        if (instance instanceof WebAssembly.Instance) {
            return { instance, module };
        } else {
            return instance;
        }
    }

    function expectedResponseType(type) {
        switch (type) {
            case 'basic': case 'cors': case 'default': return true;
        }
        return false;
    }
}

function initSync(module) {
    if (wasm !== undefined) return wasm;


    if (module !== undefined) {
        if (Object.getPrototypeOf(module) === Object.prototype) {
            ({module} = module)
        } else {
            console.warn('using deprecated parameters for `initSync()`; pass a single object instead')
        }
    }

    const imports = __wbg_get_imports();
    if (!(module instanceof WebAssembly.Module)) {
        module = new WebAssembly.Module(module);
    }
    const instance = new WebAssembly.Instance(module, imports);
    return __wbg_finalize_init(instance, module);
}

async function __wbg_init(module_or_path) {
    if (wasm !== undefined) return wasm;


    if (module_or_path !== undefined) {
        if (Object.getPrototypeOf(module_or_path) === Object.prototype) {
            ({module_or_path} = module_or_path)
        } else {
            console.warn('using deprecated parameters for the initialization function; pass a single object instead')
        }
    }

    if (module_or_path === undefined) {
        module_or_path = new URL('estm_wasm_bg.wasm', import.meta.url);
    }
    const imports = __wbg_get_imports();

    if (typeof module_or_path === 'string' || (typeof Request === 'function' && module_or_path instanceof Request) || (typeof URL === 'function' && module_or_path instanceof URL)) {
        module_or_path = fetch(module_or_path);
    }

    const { instance, module } = await __wbg_load(await module_or_path, imports);

    return __wbg_finalize_init(instance, module);
}

export { initSync, __wbg_init as default };
