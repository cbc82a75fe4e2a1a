from sqlalchemy import Column, Float, ForeignKey, Integer, String, UniqueConstraint
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class EvalRun(Base):
    """One evaluation of one tracker on one split, aggregated over its videos."""
    __tablename__ = 'eval_runs'

    id = Column(Integer, primary_key=True)
    label = Column(String, nullable=False)  # experiment name, shared by the repetitions of --runs N
    run_index = Column(Integer, nullable=False)
    tracker = Column(String, nullable=False)
    dataset = Column(String, nullable=False)
    split = Column(String, nullable=False)
    sparse_gt = Column(Integer, nullable=False, default=1)
    config_hash = Column(String, nullable=False)
    seed = Column(Integer, nullable=False)
    ss = Column(Float, nullable=False)
    ps = Column(Float, nullable=False)
    ps20 = Column(Float, nullable=False)
    fps = Column(Float, nullable=True)

    videos = relationship("VideoResult", back_populates="run", cascade="all, delete-orphan")

    # Re-evaluating the same repetition replaces the previous row.
    __table_args__ = (UniqueConstraint('label', 'tracker', 'sparse_gt', 'run_index', name='_eval_run_uc'),)

    def __repr__(self):
        return (f"<EvalRun(id={self.id}, label='{self.label}', run={self.run_index}, tracker='{self.tracker}', "
                f"ss={self.ss:.4f}, ps={self.ps:.4f})>")


class VideoResult(Base):
    __tablename__ = 'video_results'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('eval_runs.id'), nullable=False)
    video = Column(String, nullable=False)
    ss = Column(Float, nullable=False)
    ps = Column(Float, nullable=False)
    ps20 = Column(Float, nullable=False)
    fps = Column(Float, nullable=True)

    run = relationship("EvalRun", back_populates="videos")
    __table_args__ = (UniqueConstraint('run_id', 'video', name='_video_result_run_video_uc'),)

    def __repr__(self):
        return f"<VideoResult(run_id={self.run_id}, video='{self.video}', ss={self.ss:.4f})>"
