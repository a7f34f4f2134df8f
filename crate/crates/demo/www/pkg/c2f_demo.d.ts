/* tslint:disable */
/* eslint-disable */

/**
 * A pre-training run on an 80-node two-block graph, advanced step by step.
 */
export class Session {
    free(): void;
    [Symbol.dispose](): void;
    iteration(): number;
    /**
     * Every loss so far.
     */
    losses(): Float64Array;
    /**
     * `mode` is one of `vanilla`, `coarse`, `fine`, `c2f`.
     */
    constructor(mode: string, alpha: number, seed: bigint);
    /**
     * Linear-probe test accuracy of the current embeddings.
     */
    probeAccuracy(): number;
    similarity(ratios: Float64Array, draws: number): Float64Array;
    /**
     * Runs `steps` iterations and returns their losses.
     */
    step(steps: number): Float64Array;
}

export function judgmentMatrix(judgments: Float64Array, fine_scores: Float64Array, alpha: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly judgmentMatrix: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly session_iteration: (a: number) => number;
    readonly session_losses: (a: number) => [number, number];
    readonly session_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly session_probeAccuracy: (a: number) => [number, number, number];
    readonly session_similarity: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly session_step: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
