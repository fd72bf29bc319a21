import logging
import pickle
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from scipy.signal import periodogram
from sklearn.ensemble import AdaBoostClassifier, RandomForestClassifier
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from app.core.config import settings
from app.core.exceptions import BaselineException, SafeDException
from app.models.telemetry import ALL_CHANNELS, WindowSample
from app.services.baseline_network import CNNTransformer
from app.services.model_service import read_container, write_container

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("svm", "rf", "adaboost", "ct")
STAT_NAMES = ("mean", "std", "min", "max", "zcr", "dominant_hz", "band_power_4_6")
TREMOR_BAND_HZ = (4.0, 6.0)
SVM_GRID = {"svc__C": [1.0, 10.0, 100.0], "svc__gamma": ["scale", 0.01, 0.001]}

WindowLike = Union[WindowSample, np.ndarray]


class BaselineModel(BaseModel):
    kind: str = Field(..., description="svm | rf | adaboost | ct")
    seed: int = Field(..., description="학습 시드")
    estimator: Any = Field(..., description="sklearn 추정기 또는 torch 모듈")
    n_features: Optional[int] = Field(None, description="고전 모델 입력 특징 길이")
    window_len: int = Field(..., description="윈도우 길이 M")

    model_config = {"arbitrary_types_allowed": True, "protected_namespaces": ()}


def feature_layout(window_len: int) -> Dict[str, Any]:
    """featurize_flat 벡터 구성 (리포트 메타데이터용)"""
    stats = [f"{c.key}_{name}" for c in ALL_CHANNELS for name in STAT_NAMES]
    raw_length = len(ALL_CHANNELS) * window_len
    return {"stats": stats, "raw_length": raw_length, "length": len(stats) + raw_length}


class BaselineService:
    """SVM / RF / AdaBoost / CNN-Transformer 비교 탐지기 서비스"""

    def featurize_flat(self, sample: WindowLike, fs: Optional[float] = None) -> np.ndarray:
        """채널별 요약 통계 7개 + 원시 윈도우 평탄화 (길이 7·3 + 3·M)"""
        fs = fs or settings.target_hz
        matrix = sample.to_array() if isinstance(sample, WindowSample) else np.asarray(sample, dtype=float)
        stats = []
        for row in matrix:
            centered = row - row.mean()
            signs = np.sign(centered)
            crossings = np.count_nonzero(signs[:-1] * signs[1:] < 0)
            zcr = crossings / max(row.size - 1, 1)

            freqs, psd = periodogram(row, fs=fs)
            dominant = float(freqs[int(np.argmax(psd))]) if np.any(psd > 0) else 0.0
            band = (freqs >= TREMOR_BAND_HZ[0]) & (freqs <= TREMOR_BAND_HZ[1])
            df = freqs[1] - freqs[0] if freqs.size > 1 else 0.0
            band_power = float(psd[band].sum() * df)

            stats.extend([row.mean(), row.std(), row.min(), row.max(), zcr, dominant, band_power])
        return np.concatenate([np.asarray(stats, dtype=float), matrix.reshape(-1)])

    def featurize_many(self, samples: Sequence[WindowLike]) -> np.ndarray:
        if len(samples) == 0:
            return np.zeros((0, 0))
        return np.vstack([self.featurize_flat(sample) for sample in samples])

    def train_baseline(
        self,
        kind: str,
        windows: Sequence[WindowSample],
        seed: int,
        epochs: Optional[int] = None,
    ) -> BaselineModel:
        if kind not in BASELINE_KINDS:
            raise BaselineException(f"알 수 없는 베이스라인: {kind} (허용: {list(BASELINE_KINDS)})")
        labels = np.array([w.label for w in windows], dtype=np.int64)
        if labels.size == 0 or np.unique(labels).size < 2:
            raise BaselineException(f"{kind} 학습에는 두 클래스가 모두 필요합니다")

        window_len = windows[0].length
        logger.info(f"베이스라인 학습 시작: {kind} (윈도우 {len(windows)}개, seed={seed})")
        try:
            if kind == "ct":
                estimator = self._train_ct(windows, labels, seed, epochs or settings.ct_epochs)
                return BaselineModel(kind=kind, seed=seed, estimator=estimator, window_len=window_len)

            features = self.featurize_many(windows)
            estimator = self._classical(kind, labels, seed)
            estimator.fit(features, labels)
        except SafeDException:
            raise
        except Exception as e:
            logger.error(f"베이스라인 학습 실패 ({kind}): {e}")
            raise BaselineException(f"{kind} 학습에 실패했습니다: {str(e)}")
        return BaselineModel(kind=kind, seed=seed, estimator=estimator, n_features=features.shape[1], window_len=window_len)

    def predict_baseline(self, model: BaselineModel, samples: Sequence[WindowLike]) -> np.ndarray:
        if len(samples) == 0:
            return np.zeros(0, dtype=np.int64)

        if model.kind == "ct":
            x = np.stack([s.to_array() if isinstance(s, WindowSample) else np.asarray(s, dtype=float) for s in samples])
            if x.shape[1:] != (len(ALL_CHANNELS), model.window_len):
                raise BaselineException(f"입력 형태 불일치: {x.shape[1:]} != {(len(ALL_CHANNELS), model.window_len)}")
            return self._predict_ct(model.estimator, x)

        features = self.featurize_many(samples)
        if features.shape[1] != model.n_features:
            raise BaselineException(f"특징 길이 불일치: {features.shape[1]} != {model.n_features}")
        return np.asarray(model.estimator.predict(features), dtype=np.int64)

    def _classical(self, kind: str, labels: np.ndarray, seed: int):
        if kind == "rf":
            return RandomForestClassifier(n_estimators=200, random_state=seed, n_jobs=1)
        if kind == "adaboost":
            return AdaBoostClassifier(n_estimators=100, algorithm="SAMME", random_state=seed)

        folds = int(min(3, np.bincount(labels).min()))
        if folds < 2:
            return Pipeline([("scale", StandardScaler()), ("svc", SVC(kernel="rbf", random_state=seed))])
        search = GridSearchCV(
            Pipeline([("scale", StandardScaler()), ("svc", SVC(kernel="rbf", random_state=seed))]),
            SVM_GRID,
            cv=StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed),
        )
        return search

    def _train_ct(self, windows: Sequence[WindowSample], labels: np.ndarray, seed: int, epochs: int) -> CNNTransformer:
        torch.manual_seed(seed)
        x = torch.from_numpy(np.stack([w.to_array() for w in windows]).astype(np.float32))
        y = torch.from_numpy(labels)
        model = CNNTransformer(channels=x.shape[1], seq_len=x.shape[2])
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        generator = torch.Generator().manual_seed(seed)

        for epoch in range(1, epochs + 1):
            model.train()
            order = torch.randperm(x.shape[0], generator=generator)
            total = 0.0
            for start in range(0, x.shape[0], 32):
                batch = order[start:start + 32]
                optimizer.zero_grad()
                loss = F.cross_entropy(model(x[batch]), y[batch])
                if not torch.isfinite(loss):
                    raise BaselineException(f"CT 손실이 유한하지 않습니다 (epoch {epoch})")
                loss.backward()
                optimizer.step()
                total += float(loss.item()) * batch.numel()
            logger.debug(f"CT epoch {epoch}: loss={total / x.shape[0]:.4f}")
        model.eval()
        return model

    @staticmethod
    def _predict_ct(model: CNNTransformer, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        model.eval()
        tensor = torch.from_numpy(x.astype(np.float32))
        with torch.no_grad():
            preds = [model(tensor[i:i + batch_size]).argmax(dim=-1) for i in range(0, tensor.shape[0], batch_size)]
        return torch.cat(preds).numpy().astype(np.int64)

    # 저장 / 복원

    def save_baseline(self, model: BaselineModel, path: Union[str, Path]) -> Path:
        config: Dict[str, Any] = {
            "kind": model.kind,
            "n_features": model.n_features,
            "window_len": model.window_len,
        }
        if model.kind == "ct":
            arrays = {name: t.detach().cpu().numpy() for name, t in model.estimator.state_dict().items()}
        else:
            arrays = {"estimator": np.frombuffer(pickle.dumps(model.estimator), dtype=np.uint8)}
        path = write_container(path, f"baseline-{model.kind}", arrays, config, seed=model.seed)
        logger.info(f"베이스라인 저장: {path}")
        return path

    def load_baseline(self, path: Union[str, Path]) -> BaselineModel:
        header, arrays = read_container(path)
        tag = str(header.get("kind", ""))
        kind = tag.replace("baseline-", "", 1)
        if not tag.startswith("baseline-") or kind not in BASELINE_KINDS:
            raise BaselineException(f"베이스라인 체크포인트가 아닙니다: {path} (kind={tag})")

        config = header.get("config", {})
        if kind == "ct":
            estimator = CNNTransformer(seq_len=config["window_len"])
            state = estimator.state_dict()
            if set(arrays) != set(state):
                raise BaselineException(f"CT 체크포인트 목록 불일치: {path}")
            estimator.load_state_dict({name: torch.from_numpy(arrays[name]) for name in state})
            estimator.eval()
        else:
            estimator = pickle.loads(arrays["estimator"].tobytes())
        return BaselineModel(
            kind=kind,
            seed=int(header.get("seed", 0)),
            estimator=estimator,
            n_features=config.get("n_features"),
            window_len=config["window_len"],
        )
